//! Dual-direction local planning through narrow passages and global plan
//! assembly.
//!
//! A narrow configuration plus an escape velocity forms a narrow state. The
//! closed loop is rolled forward and backward from that state until both ends
//! reach the near-holonomic set; the concatenation is a local passage. Local
//! passages are then chained with low-speed holonomic connectors planned
//! entirely inside the near-holonomic set.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::io::Write;
use std::time::{Duration, Instant};
use thiserror::Error;

use crate::config::SceneParams;
use crate::control::{
    backward_control, forward_control, is_near_holonomic, ControllerGains,
    HolonomicWeights,
};
use crate::dynamics::{step_backward, step_forward, QuadParams, State, Wrench};
use crate::escape::{escape_direction, EscapeError};
use crate::narrow::{
    cluster_members, max_margin_sample, narrow_points, path_tangent, NarrowError,
};
use crate::rrt::{self, HolonomicPath, OrientationSampling, RrtStats};
use crate::world::{edge_is_free, is_collision, Configuration, RobotBody, Scene};

/// One integration sample: the state at time `t` and the wrench applied over
/// the following step. The final sample's wrench is not applied.
#[derive(Clone, Copy, Debug)]
pub struct TrajectorySample {
    pub t: f64,
    pub state: State,
    pub wrench: Wrench,
}

/// A fixed-step state/input trajectory.
#[derive(Clone, Debug)]
pub struct StateTrajectory {
    pub samples: Vec<TrajectorySample>,
    pub dt: f64,
}

impl StateTrajectory {
    pub fn duration(&self) -> f64 {
        self.samples.last().map(|s| s.t).unwrap_or(0.0)
    }

    pub fn max_speed(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.state.v.norm())
            .fold(0.0, f64::max)
    }

    pub fn first_state(&self) -> &State {
        &self.samples.first().expect("non-empty trajectory").state
    }

    pub fn last_state(&self) -> &State {
        &self.samples.last().expect("non-empty trajectory").state
    }

    /// Replays the recorded wrenches forward from the first state and returns
    /// the largest per-component deviation from the stored states.
    pub fn forward_replay_residual(&self, params: &QuadParams) -> f64 {
        let mut worst: f64 = 0.0;
        let mut s = *self.first_state();
        for pair in self.samples.windows(2) {
            s = step_forward(&s, &pair[0].wrench, self.dt, params);
            let r = &pair[1].state;
            worst = worst
                .max((s.p - r.p).abs().max())
                .max((s.v - r.v).abs().max())
                .max((s.omega - r.omega).abs().max())
                .max((s.rot.into_inner() - r.rot.into_inner()).abs().max());
        }
        worst
    }
}

/// A dynamically feasible passage through one narrow region. The state at
/// `narrow_index` is exactly the constructed narrow state.
#[derive(Clone, Debug)]
pub struct LocalPassage {
    pub trajectory: StateTrajectory,
    pub narrow_index: usize,
    pub escape_speed: f64,
}

/// One segment of the assembled plan.
#[derive(Clone, Debug)]
pub enum Segment {
    Connector(StateTrajectory),
    Passage(LocalPassage),
}

impl Segment {
    pub fn trajectory(&self) -> &StateTrajectory {
        match self {
            Segment::Connector(t) => t,
            Segment::Passage(p) => &p.trajectory,
        }
    }
}

/// Ordered alternation of low-speed connectors and local passages from the
/// start pose to the goal pose.
#[derive(Clone, Debug)]
pub struct GlobalPlan {
    pub segments: Vec<Segment>,
    pub dt: f64,
}

impl GlobalPlan {
    pub fn passages(&self) -> impl Iterator<Item = &LocalPassage> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Passage(p) => Some(p),
            Segment::Connector(_) => None,
        })
    }

    pub fn max_speed(&self) -> f64 {
        self.segments
            .iter()
            .map(|s| s.trajectory().max_speed())
            .fold(0.0, f64::max)
    }

    pub fn sample_count(&self) -> usize {
        self.segments.iter().map(|s| s.trajectory().samples.len()).sum()
    }

    /// All samples in order with globally increasing timestamps.
    pub fn global_samples(&self) -> impl Iterator<Item = TrajectorySample> + '_ {
        let dt = self.dt;
        self.segments
            .iter()
            .flat_map(|s| s.trajectory().samples.iter())
            .enumerate()
            .map(move |(i, s)| TrajectorySample {
                t: i as f64 * dt,
                ..*s
            })
    }
}

/// Pipeline stage tags carried by failures and the report.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    HolonomicRrt,
    Smoothing,
    NarrowPoints,
    Clustering,
    MaxMargin,
    EscapeDirection,
    PlanFb,
    ConnectGlobal,
    Budget,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::HolonomicRrt => "holonomic_rrt",
            Stage::Smoothing => "smoothing",
            Stage::NarrowPoints => "narrow_points",
            Stage::Clustering => "clustering",
            Stage::MaxMargin => "max_margin",
            Stage::EscapeDirection => "escape_direction",
            Stage::PlanFb => "plan_fb",
            Stage::ConnectGlobal => "connect_global",
            Stage::Budget => "budget",
        };
        f.write_str(s)
    }
}

/// Why a rollout stopped without reaching the near-holonomic set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RolloutFailure {
    Collision { t: f64 },
    Timeout,
    IntegrationDiverged,
}

impl fmt::Display for RolloutFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RolloutFailure::Collision { t } => write!(f, "collision at t = {t:.3} s"),
            RolloutFailure::Timeout => write!(f, "timeout"),
            RolloutFailure::IntegrationDiverged => write!(f, "integration diverged"),
        }
    }
}

/// Rollout direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Why one escape speed was rejected.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AttemptFailure {
    Forward(RolloutFailure),
    Backward(RolloutFailure),
    /// Both rollouts settled, but on the same side of the narrow plane: the
    /// passage never actually traversed it.
    NoTraversal,
}

impl fmt::Display for AttemptFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttemptFailure::Forward(r) => write!(f, "forward rollout: {r}"),
            AttemptFailure::Backward(r) => write!(f, "backward rollout: {r}"),
            AttemptFailure::NoTraversal => write!(f, "no traversal of the narrow plane"),
        }
    }
}

/// One speed tried by the dual-direction planner, with the failure reason
/// when it did not produce a passage.
#[derive(Clone, Copy, Debug)]
pub struct SpeedAttempt {
    pub speed: f64,
    pub reason: AttemptFailure,
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("holonomic planning failed: {0}")]
    Rrt(#[from] rrt::RrtError),
    #[error("narrow refinement failed: {0}")]
    Narrow(#[from] NarrowError),
    #[error("escape estimation failed: {0}")]
    Escape(#[from] EscapeError),
    #[error("no escape speed admitted a dual-direction passage (tried {0} speeds)")]
    ScheduleExhausted(usize),
    #[error("connector {index} failed: {source}")]
    Connector {
        index: usize,
        source: rrt::RrtError,
    },
    #[error("budget exhausted during {0}")]
    Budget(Stage),
}

/// A stage-tagged pipeline failure.
#[derive(Debug, Error)]
#[error("{stage}: {source}")]
pub struct KatError {
    pub stage: Stage,
    pub source: PlanError,
}

/// Shared context for closed-loop rollouts.
#[derive(Clone, Copy)]
pub struct RolloutCtx<'a> {
    pub scene: &'a Scene,
    pub robot: &'a RobotBody,
    pub quad: &'a QuadParams,
    pub gains: &'a ControllerGains,
    pub weights: &'a HolonomicWeights,
    pub t_max: f64,
    pub dt: f64,
    pub resolution: f64,
}

/// Rolls the closed loop from `s0` until the state enters the near-holonomic
/// set (success), collides, or exceeds `t_max`. The backward direction steps
/// the exact inverse dynamics under the time-inverse controller and returns
/// its samples in forward time order, ending at `s0`.
pub fn rollout(
    s0: &State,
    direction: Direction,
    ctx: &RolloutCtx,
) -> Result<StateTrajectory, RolloutFailure> {
    let max_steps = (ctx.t_max / ctx.dt).ceil() as usize;
    let mut s = *s0;
    // (state, wrench applied over the step leaving this state forward in time)
    let mut entries: Vec<(State, Wrench)> = Vec::new();

    let mut finished = false;
    for step in 0..=max_steps {
        let c = s.configuration();
        if is_collision(&c, ctx.scene, ctx.robot) {
            return Err(RolloutFailure::Collision {
                t: step as f64 * ctx.dt,
            });
        }
        if is_near_holonomic(&s, ctx.weights) {
            finished = true;
            match direction {
                Direction::Forward => entries.push((s, forward_control(&s, ctx.quad, ctx.gains))),
                Direction::Backward => entries.push((s, backward_control(&s, ctx.quad, ctx.gains))),
            }
            break;
        }
        if step == max_steps {
            break;
        }
        let (next, wrench) = match direction {
            Direction::Forward => {
                let w = forward_control(&s, ctx.quad, ctx.gains);
                (step_forward(&s, &w, ctx.dt, ctx.quad), w)
            }
            Direction::Backward => {
                let w = backward_control(&s, ctx.quad, ctx.gains);
                let prev = step_backward(&s, &w, ctx.dt, ctx.quad)
                    .map_err(|_| RolloutFailure::IntegrationDiverged)?;
                (prev, w)
            }
        };
        if !next.p.iter().all(|x| x.is_finite()) {
            return Err(RolloutFailure::IntegrationDiverged);
        }
        // Swept check between consecutive configurations.
        if !edge_is_free(&c, &next.configuration(), ctx.scene, ctx.robot, ctx.resolution) {
            return Err(RolloutFailure::Collision {
                t: (step + 1) as f64 * ctx.dt,
            });
        }
        entries.push((s, wrench));
        s = next;
    }
    if !finished {
        return Err(RolloutFailure::Timeout);
    }

    let samples = match direction {
        Direction::Forward => entries
            .iter()
            .enumerate()
            .map(|(i, (state, wrench))| TrajectorySample {
                t: i as f64 * ctx.dt,
                state: *state,
                wrench: *wrench,
            })
            .collect(),
        Direction::Backward => {
            // entries[k] holds the state k steps before s0 and the wrench
            // computed there; that wrench acts on the forward-time interval
            // from entries[k+1] to entries[k]. After reversal, sample i is
            // entries[n-1-i] and the step leaving it uses entries[n-2-i].1.
            let n = entries.len();
            (0..n)
                .map(|i| {
                    let (state, _) = entries[n - 1 - i];
                    let wrench = if i + 1 < n {
                        entries[n - 2 - i].1
                    } else {
                        entries[0].1
                    };
                    TrajectorySample {
                        t: i as f64 * ctx.dt,
                        state,
                        wrench,
                    }
                })
                .collect()
        }
    };
    Ok(StateTrajectory {
        samples,
        dt: ctx.dt,
    })
}

/// Tries escape speeds from an increasing schedule; the first speed whose
/// forward and backward rollouts both reach the near-holonomic set on
/// opposite sides of the narrow plane yields the passage. Attempted speeds
/// and their failure reasons are returned either way.
pub fn plan_fb(
    c_nar: &Configuration,
    dir: &Vector3<f64>,
    schedule: impl Iterator<Item = f64>,
    min_separation: f64,
    ctx: &RolloutCtx,
) -> (Result<LocalPassage, PlanError>, Vec<SpeedAttempt>) {
    let mut attempts = Vec::new();
    for speed in schedule {
        let s_nar = State {
            p: c_nar.p,
            rot: c_nar.r.to_rotation_matrix(),
            v: speed * dir,
            omega: Vector3::zeros(),
        };
        let fwd = match rollout(&s_nar, Direction::Forward, ctx) {
            Ok(t) => t,
            Err(r) => {
                attempts.push(SpeedAttempt {
                    speed,
                    reason: AttemptFailure::Forward(r),
                });
                continue;
            }
        };
        let bwd = match rollout(&s_nar, Direction::Backward, ctx) {
            Ok(t) => t,
            Err(r) => {
                attempts.push(SpeedAttempt {
                    speed,
                    reason: AttemptFailure::Backward(r),
                });
                continue;
            }
        };
        // The passage must genuinely cross the narrow plane: the approach
        // settles against the escape direction and the exit beyond it.
        let entry = (bwd.first_state().p - c_nar.p).dot(dir);
        let exit = (fwd.last_state().p - c_nar.p).dot(dir);
        if entry > -min_separation || exit < min_separation {
            attempts.push(SpeedAttempt {
                speed,
                reason: AttemptFailure::NoTraversal,
            });
            continue;
        }

        let narrow_index = bwd.samples.len() - 1;
        let mut samples = bwd.samples;
        // The narrow sample's wrench is the first forward wrench.
        samples.last_mut().expect("non-empty").wrench = fwd.samples[0].wrench;
        samples.extend(fwd.samples.into_iter().skip(1));
        for (i, s) in samples.iter_mut().enumerate() {
            s.t = i as f64 * ctx.dt;
        }
        let passage = LocalPassage {
            trajectory: StateTrajectory {
                samples,
                dt: ctx.dt,
            },
            narrow_index,
            escape_speed: speed,
        };
        return (Ok(passage), attempts);
    }
    let n = attempts.len();
    (Err(PlanError::ScheduleExhausted(n)), attempts)
}

/// Deterministic per-stage seed derivation.
pub fn derive_seed(seed: u64, salt: u64, a: u64, b: u64) -> u64 {
    let mut x = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(salt)
        .wrapping_add(a.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(b.wrapping_mul(0x94D0_49BB_1331_11EB));
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x
}

/// Constant-low-speed time parameterization of a holonomic path with
/// trapezoidal speed ramps. Orientation follows the path's own interpolation.
fn parameterize_connector(
    path: &HolonomicPath,
    v_slow: f64,
    accel: f64,
    dt: f64,
    hover: Wrench,
) -> StateTrajectory {
    let length = path.length();
    let mut samples = Vec::new();
    if length < 1e-9 {
        let c = path.waypoints[0];
        samples.push(TrajectorySample {
            t: 0.0,
            state: State::at_rest(&c),
            wrench: hover,
        });
        return StateTrajectory { samples, dt };
    }

    // Trapezoidal (or triangular) arc-length profile.
    let d_ramp = v_slow * v_slow / (2.0 * accel);
    let (v_peak, t_ramp, t_cruise) = if length >= 2.0 * d_ramp {
        (v_slow, v_slow / accel, (length - 2.0 * d_ramp) / v_slow)
    } else {
        let v = (accel * length).sqrt();
        (v, v / accel, 0.0)
    };
    let t_total = 2.0 * t_ramp + t_cruise;
    let s_of_t = |t: f64| -> (f64, f64) {
        if t <= t_ramp {
            (0.5 * accel * t * t, accel * t)
        } else if t <= t_ramp + t_cruise {
            (0.5 * accel * t_ramp * t_ramp + v_peak * (t - t_ramp), v_peak)
        } else {
            let tau = (t_total - t).max(0.0);
            (length - 0.5 * accel * tau * tau, accel * tau)
        }
    };

    let steps = (t_total / dt).ceil() as usize;
    let mut prev_cfg: Option<Configuration> = None;
    for k in 0..=steps {
        let t = (k as f64 * dt).min(t_total);
        let (s, speed) = s_of_t(t);
        let cfg = path.at_arc_length(s);
        // Tangent from a small arc-length lookahead.
        let ds = (0.01f64).min(length * 0.5);
        let ahead = path.at_arc_length((s + ds).min(length));
        let behind = path.at_arc_length((s - ds).max(0.0));
        let dir = ahead.p - behind.p;
        let v = if dir.norm() > 1e-12 {
            dir.normalize() * speed
        } else {
            Vector3::zeros()
        };
        // Body rate from the orientation change of the previous step.
        let omega = match prev_cfg {
            Some(p) => (p.r.inverse() * cfg.r).scaled_axis() / dt,
            None => Vector3::zeros(),
        };
        prev_cfg = Some(cfg);
        samples.push(TrajectorySample {
            t,
            state: State {
                p: cfg.p,
                rot: cfg.r.to_rotation_matrix(),
                v,
                omega,
            },
            wrench: hover,
        });
    }
    StateTrajectory { samples, dt }
}

/// Everything measured about one planning run.
#[derive(Clone, Debug, Default)]
pub struct PlanReport {
    pub success: bool,
    pub seed: u64,
    pub wall_time: f64,
    pub sampled_nodes: usize,
    pub rrt_iterations: usize,
    pub rrt_time: f64,
    pub goal_tests: Vec<usize>,
    pub path_length: Option<f64>,
    pub smoothed_length: Option<f64>,
    pub max_speed: Option<f64>,
    pub clusters: usize,
    pub escape_speeds: Vec<f64>,
    /// Inner product of each escape direction with its passage tangent.
    pub escape_alignments: Vec<f64>,
    /// Speeds that failed below each returned escape speed, per passage.
    pub rejected_speeds: Vec<Vec<f64>>,
    pub failure_stage: Option<String>,
    /// One line per refinement attempt, for diagnostics.
    pub attempt_log: Vec<String>,
}

/// Connects consecutive passage endpoints (and the scene start/goal) with
/// smoothed, low-speed holonomic connectors planned inside the
/// near-holonomic set, and assembles the global plan.
pub fn connect_global(
    passages: Vec<LocalPassage>,
    scene: &Scene,
    robot: &RobotBody,
    params: &SceneParams,
    seed: u64,
    budget: Duration,
) -> Result<GlobalPlan, PlanError> {
    let v_slow = 0.5 * params.weights.epsilon / params.weights.w_v;
    let hover = params.quad.hover_wrench();
    let dt = params.drive.dt;

    // Configuration chain: start -> passage entries/exits -> goal.
    let mut anchors: Vec<Configuration> = vec![scene.start];
    for p in &passages {
        anchors.push(p.trajectory.first_state().configuration());
        anchors.push(p.trajectory.last_state().configuration());
    }
    anchors.push(scene.goal);

    let mut connector_params = params.rrt;
    connector_params.orientation = OrientationSampling::EndpointGeodesic;

    let mut segments = Vec::new();
    for i in 0..=passages.len() {
        let a = anchors[2 * i];
        let b = anchors[2 * i + 1];
        let sub = Scene {
            start: a,
            goal: b,
            ..scene.clone()
        };
        let path = if (a.p - b.p).norm() < 1e-9 && a.angle_to(&b) < 1e-9 {
            HolonomicPath::from_waypoints(vec![a, b])
        } else {
            let (res, _) = rrt::plan(
                &sub,
                robot,
                derive_seed(seed, 0xC0, i as u64, 0),
                budget,
                &connector_params,
            );
            let raw = res.map_err(|source| PlanError::Connector { index: i, source })?;
            rrt::smooth(
                &raw,
                &sub,
                robot,
                params.drive.smooth_iterations,
                derive_seed(seed, 0xC1, i as u64, 0),
                params.rrt.resolution,
            )
        };
        segments.push(Segment::Connector(parameterize_connector(
            &path,
            v_slow,
            params.drive.connector_accel,
            dt,
            hover,
        )));
        if i < passages.len() {
            segments.push(Segment::Passage(passages[i].clone()));
        }
    }
    Ok(GlobalPlan { segments, dt })
}

/// Runs the whole pipeline: holonomic planning, smoothing, narrow-point
/// analysis, per-passage refinement and dual-direction planning, and global
/// assembly. Deterministic for a fixed seed.
pub fn kat(
    scene: &Scene,
    robot: &RobotBody,
    params: &SceneParams,
    seed: u64,
    budget: Duration,
    conventional_rrt: bool,
) -> (Result<GlobalPlan, KatError>, PlanReport) {
    let t0 = Instant::now();
    let mut report = PlanReport {
        seed,
        ..Default::default()
    };
    let fail = |stage: Stage, source: PlanError, report: &mut PlanReport, t0: &Instant| {
        report.success = false;
        report.failure_stage = Some(stage.to_string());
        report.wall_time = t0.elapsed().as_secs_f64();
        KatError { stage, source }
    };

    // Stage 1: holonomic path.
    let (rrt_result, stats): (Result<HolonomicPath, rrt::RrtError>, RrtStats) =
        if conventional_rrt {
            rrt::plan_conventional(scene, robot, derive_seed(seed, 0xA0, 0, 0), budget, &params.rrt)
        } else {
            rrt::plan(scene, robot, derive_seed(seed, 0xA0, 0, 0), budget, &params.rrt)
        };
    report.sampled_nodes = stats.sampled_nodes;
    report.rrt_iterations = stats.iterations;
    report.rrt_time = stats.elapsed;
    report.goal_tests = stats.goal_tests.clone();
    let holo_path = match rrt_result {
        Ok(p) => p,
        Err(e) => {
            let err = fail(Stage::HolonomicRrt, e.into(), &mut report, &t0);
            return (Err(err), report);
        }
    };
    report.path_length = Some(holo_path.length());

    let remaining = |t0: &Instant| budget.saturating_sub(t0.elapsed());
    if remaining(&t0).is_zero() {
        let err = fail(
            Stage::Budget,
            PlanError::Budget(Stage::Smoothing),
            &mut report,
            &t0,
        );
        return (Err(err), report);
    }

    // Stage 2: shortcut smoothing.
    let smoothed = rrt::smooth(
        &holo_path,
        scene,
        robot,
        params.drive.smooth_iterations,
        derive_seed(seed, 0xA1, 0, 0),
        params.rrt.resolution,
    );
    report.smoothed_length = Some(smoothed.length());

    // Stage 3: narrow points and clusters. Attitudes are reduced modulo the
    // body box symmetries: the holonomic stage cannot tell the members apart,
    // but only the near-level representative is worth flying.
    let points: Vec<Configuration> = narrow_points(&smoothed, scene, robot, params.narrow.h)
        .into_iter()
        .map(|c| {
            let r = crate::world::canonical_box_attitude(&c.r, &robot.half_extents);
            Configuration::new(c.p, crate::world::swing_attitude(&r))
        })
        .collect();
    let clusters = cluster_members(&points, params.narrow.link_radius);
    report.clusters = clusters.len();

    // Stage 4: per-cluster refinement and dual-direction planning. Rollouts
    // target a tightened threshold so connectors stay strictly inside the
    // near-holonomic set after their own velocity term is added.
    let tight = params
        .weights
        .with_epsilon(params.drive.rollout_epsilon_factor * params.weights.epsilon);
    let ctx = RolloutCtx {
        scene,
        robot,
        quad: &params.quad,
        gains: &params.gains,
        weights: &tight,
        t_max: params.drive.t_max,
        dt: params.drive.dt,
        resolution: params.rrt.resolution,
    };
    let schedule_len =
        (params.drive.v_max / params.drive.v_step).floor().max(1.0) as usize;
    let schedule =
        move |step: f64| (1..=schedule_len).map(move |k| k as f64 * step);

    let mut passages = Vec::new();
    for (ci, members) in clusters.iter().enumerate() {
        if remaining(&t0).is_zero() {
            let err = fail(
                Stage::Budget,
                PlanError::Budget(Stage::PlanFb),
                &mut report,
                &t0,
            );
            return (Err(err), report);
        }
        // Candidate anchors: the cluster centroid first, then members by
        // ascending clearance (the tightest points are the actual
        // bottleneck), so retries explore genuinely different anchors.
        let centroid = centroid_of(members);
        let mut ranked: Vec<Configuration> = members.clone();
        ranked.sort_by(|a, b| {
            crate::world::margin(a, scene, robot)
                .partial_cmp(&crate::world::margin(b, scene, robot))
                .unwrap()
        });
        let mut anchors = vec![centroid];
        anchors.extend(ranked);

        let mut last_err: Option<(Stage, PlanError)> = None;
        let mut done = false;
        // The collision-filtered escape estimate carries the local passage
        // axis; each attempt also refines around the attitude implied by that
        // axis and lets clearance pick the winner.
        let mut axis_hint: Option<Vector3<f64>> = None;
        for attempt in 0..params.drive.retries.max(1) {
            let anchor = anchors[attempt.min(anchors.len() - 1)];
            let tangent = path_tangent(&smoothed, &anchor, params.narrow.h);
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xB0, ci as u64, attempt as u64));
            let probe_axis = axis_hint.or_else(|| {
                escape_direction(
                    &anchor,
                    &tangent,
                    scene,
                    robot,
                    params.escape.samples,
                    params.escape.mu,
                    params.escape.sigma,
                    &mut rng,
                )
                .ok()
                .map(|e| e.dir)
            });
            let mut centers = vec![anchor];
            if let Some(axis) = probe_axis {
                centers.push(Configuration::new(anchor.p, attitude_across(&axis)));
            }
            let mut refined: Option<Configuration> = None;
            for center in &centers {
                if let Ok(c) = max_margin_sample(
                    center,
                    &tangent,
                    scene,
                    robot,
                    params.narrow.rho,
                    params.narrow.samples,
                    params.narrow.theta_max,
                    params.narrow.delta,
                    params.narrow.objective,
                    &mut rng,
                ) {
                    let better = match &refined {
                        None => true,
                        Some(r) => {
                            crate::world::margin(&c, scene, robot)
                                > crate::world::margin(r, scene, robot)
                        }
                    };
                    if better {
                        refined = Some(c);
                    }
                }
            }
            let refined = match refined {
                Some(c) => c,
                None => {
                    last_err = Some((Stage::MaxMargin, NarrowError::PassageBlocked.into()));
                    continue;
                }
            };
            let esc = match escape_direction(
                &refined,
                &tangent,
                scene,
                robot,
                params.escape.samples,
                params.escape.mu,
                params.escape.sigma,
                &mut rng,
            ) {
                Ok(e) => e,
                Err(e) => {
                    last_err = Some((Stage::EscapeDirection, e.into()));
                    continue;
                }
            };
            axis_hint = Some(esc.dir);
            let (res, attempts) = plan_fb(
                &refined,
                &esc.dir,
                schedule(params.drive.v_step),
                params.drive.min_escape_separation,
                &ctx,
            );
            let outcome = match &res {
                Ok(p) => format!("ok v={}", p.escape_speed),
                Err(_) => {
                    let mut fwd = 0;
                    let mut bwd = 0;
                    let mut side = 0;
                    let mut ok_bands: Vec<f64> = Vec::new();
                    for a in &attempts {
                        match a.reason {
                            AttemptFailure::Forward(_) => fwd += 1,
                            AttemptFailure::Backward(_) => bwd += 1,
                            AttemptFailure::NoTraversal => {
                                side += 1;
                                ok_bands.push(a.speed);
                            }
                        }
                    }
                    format!(
                        "exhausted (fwd {fwd}, bwd {bwd}, notrav {side} at {ok_bands:?})"
                    )
                }
            };
            report.attempt_log.push(format!(
                "cluster {ci} attempt {attempt}: anchor ({:.2},{:.2},{:.2}) ang {:.0} -> refined ({:.2},{:.2},{:.2}) ang {:.0} margin {:.3}, dir ({:.2},{:.2},{:.2}) sup {}, {outcome}",
                anchor.p.x, anchor.p.y, anchor.p.z, anchor.r.angle().to_degrees(),
                refined.p.x, refined.p.y, refined.p.z, refined.r.angle().to_degrees(),
                crate::world::margin(&refined, scene, robot),
                esc.dir.x, esc.dir.y, esc.dir.z, esc.support,
            ));
            match res {
                Ok(passage) => {
                    report.escape_speeds.push(passage.escape_speed);
                    report.escape_alignments.push(esc.dir.dot(&tangent));
                    report
                        .rejected_speeds
                        .push(attempts.iter().map(|a| a.speed).collect());
                    passages.push(passage);
                    done = true;
                    break;
                }
                Err(e) => {
                    last_err = Some((Stage::PlanFb, e));
                }
            }
        }
        if !done {
            let (stage, source) =
                last_err.unwrap_or((Stage::PlanFb, PlanError::ScheduleExhausted(0)));
            let err = fail(stage, source, &mut report, &t0);
            return (Err(err), report);
        }
    }

    // Stage 5: global assembly.
    match connect_global(passages, scene, robot, params, seed, remaining(&t0)) {
        Ok(plan) => {
            report.success = true;
            report.max_speed = Some(plan.max_speed());
            report.wall_time = t0.elapsed().as_secs_f64();
            (Ok(plan), report)
        }
        Err(e) => {
            let err = fail(Stage::ConnectGlobal, e, &mut report, &t0);
            (Err(err), report)
        }
    }
}

fn centroid_of(members: &[Configuration]) -> Configuration {
    crate::narrow::cluster_centroids(members, f64::INFINITY)
        .into_iter()
        .next()
        .expect("non-empty cluster")
}

/// The most upright attitude whose body plane contains the passage axis:
/// body z points along the up-most direction perpendicular to `axis`.
fn attitude_across(axis: &Vector3<f64>) -> nalgebra::UnitQuaternion<f64> {
    let d = axis.normalize();
    let up = Vector3::z();
    let w = up - d * up.dot(&d);
    let target = if w.norm() > 1e-9 { w.normalize() } else { up };
    nalgebra::UnitQuaternion::rotation_between(&up, &target)
        .unwrap_or_else(nalgebra::UnitQuaternion::identity)
}

/// Formats a value with 9 significant decimal digits.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return "0.00000000".into();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (8 - magnitude).clamp(0, 17) as usize;
    format!("{x:.decimals$}")
}

/// Writes the trajectory table: one row per sample with the pose quaternion,
/// velocities and the applied wrench.
pub fn write_trajectory_csv<W: Write>(plan: &GlobalPlan, mut out: W) -> std::io::Result<()> {
    writeln!(out, "t,x,y,z,qr,qi,qj,qk,vx,vy,vz,wx,wy,wz,f,Mx,My,Mz")?;
    for s in plan.global_samples() {
        let q = s.state.quaternion();
        let row = [
            s.t,
            s.state.p.x,
            s.state.p.y,
            s.state.p.z,
            q.w,
            q.i,
            q.j,
            q.k,
            s.state.v.x,
            s.state.v.y,
            s.state.v.z,
            s.state.omega.x,
            s.state.omega.y,
            s.state.omega.z,
            s.wrench.thrust,
            s.wrench.moment.x,
            s.wrench.moment.y,
            s.wrench.moment.z,
        ];
        let line: Vec<String> = row.iter().map(|v| format_sig9(*v)).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}
