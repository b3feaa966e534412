//! Holonomic-space planning: an RRT with whitelisted goal connection
//! attempts, the conventional baseline, and randomized shortcut smoothing.
//!
//! Goal-biased iterations try a direct collision-checked edge from a
//! candidate node to the goal. The whitelisted variant draws that candidate
//! from the set of nodes never goal-tested before and retires it afterwards,
//! so no node is tested twice; the conventional variant always retests the
//! globally nearest node.

use nalgebra::{UnitQuaternion, Vector3, Vector4};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::time::{Duration, Instant};
use thiserror::Error;

use crate::world::{edge_is_free, interpolate, is_collision, Configuration, RobotBody, Scene};

/// How sample orientations are drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OrientationSampling {
    /// Uniform over the rotation group.
    #[default]
    UniformSo3,
    /// On the geodesic between the start and goal orientations. Used for
    /// low-speed connectors, whose attitudes must stay near the endpoints.
    EndpointGeodesic,
}

/// Tuning knobs for holonomic planning.
#[derive(Clone, Copy, Debug)]
pub struct RrtParams {
    /// Probability of a goal-biased iteration.
    pub p_goal: f64,
    /// Maximum extension step, meters.
    pub extend_step: f64,
    /// Rotation weight in the nearest-neighbor metric, meters per radian.
    pub rot_weight: f64,
    /// Edge collision-check resolution, meters.
    pub resolution: f64,
    /// Hard cap on iterations, a deterministic backstop behind the budget.
    pub max_iterations: usize,
    pub orientation: OrientationSampling,
}

impl RrtParams {
    pub fn defaults_for(robot: &RobotBody) -> Self {
        Self {
            p_goal: 0.1,
            extend_step: 0.5,
            rot_weight: robot.circumscribed_radius(),
            resolution: 0.01,
            max_iterations: 400_000,
            orientation: OrientationSampling::default(),
        }
    }
}

/// Search tree over configurations. `whitelist` holds indices not yet used in
/// a goal connection attempt.
#[derive(Clone, Debug)]
pub struct Tree {
    pub nodes: Vec<Configuration>,
    pub parents: Vec<Option<usize>>,
    pub whitelist: Vec<usize>,
}

impl Tree {
    fn new(root: Configuration) -> Self {
        Self {
            nodes: vec![root],
            parents: vec![None],
            whitelist: vec![0],
        }
    }

    fn push(&mut self, c: Configuration, parent: usize) -> usize {
        let idx = self.nodes.len();
        self.nodes.push(c);
        self.parents.push(Some(parent));
        self.whitelist.push(idx);
        idx
    }

    fn path_to_root(&self, mut idx: usize) -> Vec<Configuration> {
        let mut out = vec![self.nodes[idx]];
        while let Some(p) = self.parents[idx] {
            out.push(self.nodes[p]);
            idx = p;
        }
        out.reverse();
        out
    }
}

/// A collision-free waypoint sequence with its cumulative arc length.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HolonomicPath {
    pub waypoints: Vec<Configuration>,
    /// Cumulative positional arc length per waypoint; last entry is the total.
    pub arc_length: Vec<f64>,
}

impl HolonomicPath {
    pub fn from_waypoints(waypoints: Vec<Configuration>) -> Self {
        assert!(!waypoints.is_empty());
        let mut arc = Vec::with_capacity(waypoints.len());
        let mut acc = 0.0;
        arc.push(0.0);
        for pair in waypoints.windows(2) {
            acc += (pair[1].p - pair[0].p).norm();
            arc.push(acc);
        }
        Self {
            waypoints,
            arc_length: arc,
        }
    }

    pub fn length(&self) -> f64 {
        *self.arc_length.last().unwrap()
    }

    /// Configuration at a positional arc-length parameter.
    pub fn at_arc_length(&self, s: f64) -> Configuration {
        let s = s.clamp(0.0, self.length());
        match self
            .arc_length
            .binary_search_by(|a| a.partial_cmp(&s).unwrap())
        {
            Ok(i) => self.waypoints[i],
            Err(i) => {
                let (a, b) = (i - 1, i);
                let span = self.arc_length[b] - self.arc_length[a];
                let t = if span > 0.0 {
                    (s - self.arc_length[a]) / span
                } else {
                    0.0
                };
                interpolate(&self.waypoints[a], &self.waypoints[b], t)
            }
        }
    }

    /// Waypoints resampled at positional spacing `h` (endpoints included).
    pub fn resample(&self, h: f64) -> Vec<Configuration> {
        assert!(h > 0.0);
        let n = (self.length() / h).ceil().max(1.0) as usize;
        (0..=n)
            .map(|k| self.at_arc_length(self.length() * k as f64 / n as f64))
            .collect()
    }
}

/// Counters describing one planning run.
#[derive(Clone, Debug, Default, Serialize)]
pub struct RrtStats {
    /// Nodes added to the tree, root included.
    pub sampled_nodes: usize,
    pub iterations: usize,
    pub elapsed: f64,
    /// Node indices used in goal connection attempts, in test order.
    pub goal_tests: Vec<usize>,
}

#[derive(Debug, Error)]
pub enum RrtError {
    #[error("start configuration is in collision")]
    StartInCollision,
    #[error("goal configuration is in collision")]
    GoalInCollision,
    #[error("budget exhausted after {iterations} iterations, {nodes} nodes, {elapsed:.2} s")]
    BudgetExhausted {
        iterations: usize,
        nodes: usize,
        elapsed: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GoalStrategy {
    /// Goal connections drawn from the not-yet-tested whitelist.
    Whitelist,
    /// Goal connections always from the globally nearest node.
    Conventional,
}

fn quat_distance(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    a.angle_to(b)
}

fn config_distance(a: &Configuration, b: &Configuration, rot_weight: f64) -> f64 {
    (a.p - b.p).norm() + rot_weight * quat_distance(&a.r, &b.r)
}

/// Uniform random unit quaternion via a normalized 4-d Gaussian draw.
fn sample_uniform_quaternion(rng: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
    loop {
        let v = Vector4::new(
            rng.sample::<f64, _>(rand_distr::StandardNormal),
            rng.sample::<f64, _>(rand_distr::StandardNormal),
            rng.sample::<f64, _>(rand_distr::StandardNormal),
            rng.sample::<f64, _>(rand_distr::StandardNormal),
        );
        let n = v.norm();
        if n > 1e-9 {
            return UnitQuaternion::new_unchecked(
                nalgebra::Quaternion::new(v.x, v.y, v.z, v.w) / n,
            );
        }
    }
}

fn sample_configuration(
    rng: &mut ChaCha8Rng,
    scene: &Scene,
    orientation: OrientationSampling,
) -> Configuration {
    let p = Vector3::new(
        rng.gen_range(scene.bounds.min.x..scene.bounds.max.x),
        rng.gen_range(scene.bounds.min.y..scene.bounds.max.y),
        rng.gen_range(scene.bounds.min.z..scene.bounds.max.z),
    );
    let r = match orientation {
        OrientationSampling::UniformSo3 => sample_uniform_quaternion(rng),
        OrientationSampling::EndpointGeodesic => {
            scene.start.r.slerp(&scene.goal.r, rng.gen::<f64>())
        }
    };
    Configuration::new(p, r)
}

fn nearest(nodes: &[Configuration], target: &Configuration, rot_weight: f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, n) in nodes.iter().enumerate() {
        let d = config_distance(n, target, rot_weight);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Clips `target` to within one extension step of `from` in the combined
/// position/rotation metric.
fn steer(
    from: &Configuration,
    target: &Configuration,
    step: f64,
    rot_weight: f64,
) -> Configuration {
    let d = config_distance(from, target, rot_weight);
    if d <= step {
        *target
    } else {
        interpolate(from, target, step / d)
    }
}

fn plan_impl(
    scene: &Scene,
    robot: &RobotBody,
    seed: u64,
    budget: Duration,
    params: &RrtParams,
    strategy: GoalStrategy,
) -> (Result<HolonomicPath, RrtError>, RrtStats) {
    let mut stats = RrtStats::default();
    let start_time = Instant::now();
    if is_collision(&scene.start, scene, robot) {
        return (Err(RrtError::StartInCollision), stats);
    }
    if is_collision(&scene.goal, scene, robot) {
        return (Err(RrtError::GoalInCollision), stats);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tree = Tree::new(scene.start);

    for iter in 0..params.max_iterations {
        stats.iterations = iter + 1;
        if iter % 64 == 0 && start_time.elapsed() > budget {
            break;
        }

        if rng.gen::<f64>() < params.p_goal {
            // Goal-biased iteration: attempt a direct connection.
            let candidate = match strategy {
                GoalStrategy::Whitelist => {
                    if tree.whitelist.is_empty() {
                        continue;
                    }
                    let pos = tree
                        .whitelist
                        .iter()
                        .enumerate()
                        .min_by(|(_, &a), (_, &b)| {
                            config_distance(&tree.nodes[a], &scene.goal, params.rot_weight)
                                .partial_cmp(&config_distance(
                                    &tree.nodes[b],
                                    &scene.goal,
                                    params.rot_weight,
                                ))
                                .unwrap()
                        })
                        .map(|(i, _)| i)
                        .unwrap();
                    tree.whitelist.swap_remove(pos)
                }
                GoalStrategy::Conventional => {
                    nearest(&tree.nodes, &scene.goal, params.rot_weight)
                }
            };
            stats.goal_tests.push(candidate);
            if edge_is_free(
                &tree.nodes[candidate],
                &scene.goal,
                scene,
                robot,
                params.resolution,
            ) {
                let goal_idx = tree.push(scene.goal, candidate);
                let path = HolonomicPath::from_waypoints(tree.path_to_root(goal_idx));
                stats.sampled_nodes = tree.nodes.len();
                stats.elapsed = start_time.elapsed().as_secs_f64();
                return (Ok(path), stats);
            }
        } else {
            let target = sample_configuration(&mut rng, scene, params.orientation);
            let near = nearest(&tree.nodes, &target, params.rot_weight);
            let new = steer(&tree.nodes[near], &target, params.extend_step, params.rot_weight);
            if edge_is_free(&tree.nodes[near], &new, scene, robot, params.resolution) {
                tree.push(new, near);
            }
        }
    }

    stats.sampled_nodes = tree.nodes.len();
    stats.elapsed = start_time.elapsed().as_secs_f64();
    let err = RrtError::BudgetExhausted {
        iterations: stats.iterations,
        nodes: stats.sampled_nodes,
        elapsed: stats.elapsed,
    };
    (Err(err), stats)
}

/// Whitelisted RRT: every node is goal-tested at most once.
pub fn plan(
    scene: &Scene,
    robot: &RobotBody,
    seed: u64,
    budget: Duration,
    params: &RrtParams,
) -> (Result<HolonomicPath, RrtError>, RrtStats) {
    plan_impl(scene, robot, seed, budget, params, GoalStrategy::Whitelist)
}

/// Conventional baseline: goal connections always from the global nearest
/// node. Kept for the planner comparison benchmarks.
pub fn plan_conventional(
    scene: &Scene,
    robot: &RobotBody,
    seed: u64,
    budget: Duration,
    params: &RrtParams,
) -> (Result<HolonomicPath, RrtError>, RrtStats) {
    plan_impl(
        scene,
        robot,
        seed,
        budget,
        params,
        GoalStrategy::Conventional,
    )
}

/// Randomized shortcutting: pick two random points along the path and splice
/// a straight edge between them when it is collision-free. Path length never
/// increases and the result stays collision-free.
pub fn smooth(
    path: &HolonomicPath,
    scene: &Scene,
    robot: &RobotBody,
    iterations: usize,
    seed: u64,
    resolution: f64,
) -> HolonomicPath {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current = path.clone();
    for _ in 0..iterations {
        if current.waypoints.len() < 3 && current.length() < resolution {
            break;
        }
        let s1 = rng.gen_range(0.0..current.length().max(1e-12));
        let s2 = rng.gen_range(0.0..current.length().max(1e-12));
        let (lo, hi) = if s1 < s2 { (s1, s2) } else { (s2, s1) };
        if hi - lo < resolution {
            continue;
        }
        let a = current.at_arc_length(lo);
        let b = current.at_arc_length(hi);
        if !edge_is_free(&a, &b, scene, robot, resolution) {
            continue;
        }
        // Keep waypoints outside (lo, hi), bridge with the straight edge.
        let mut next = Vec::new();
        for (i, w) in current.waypoints.iter().enumerate() {
            if current.arc_length[i] < lo {
                next.push(*w);
            }
        }
        next.push(a);
        next.push(b);
        for (i, w) in current.waypoints.iter().enumerate() {
            if current.arc_length[i] > hi {
                next.push(*w);
            }
        }
        let candidate = HolonomicPath::from_waypoints(next);
        if candidate.length() <= current.length() + 1e-12 {
            current = candidate;
        }
    }
    current
}
