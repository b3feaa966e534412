//! Narrow-point detection along a holonomic path, clustering, and
//! maximum-clearance refinement in the plane perpendicular to the path.

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::rrt::HolonomicPath;
use crate::world::{
    is_collision, margin_against, point_obstacle_distance, Configuration, Obstacle, RobotBody,
    Scene,
};

/// One refined narrow passage: the raw cluster center, its maximum-clearance
/// replacement, the local path tangent and the clustered raw points.
#[derive(Clone, Debug)]
pub struct NarrowCluster {
    pub center: Configuration,
    pub refined: Configuration,
    pub tangent: Vector3<f64>,
    pub member_points: Vec<Configuration>,
}

/// Scoring rule for the perpendicular-plane refinement.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MarginObjective {
    /// Maximize clearance to nearby obstacles.
    #[default]
    Clearance,
    /// Minimize the summed squared distance to the in-collision samples.
    SummedSquaredDistance,
}

#[derive(Debug, Error)]
pub enum NarrowError {
    #[error("no collision-free sample in the perpendicular plane (passage unusable)")]
    PassageBlocked,
}

/// Waypoints of the path (resampled at spacing `h`) whose position
/// neighborhood is mostly blocked: at least 4 of the 6 axis-aligned probes at
/// offset `h` collide.
pub fn narrow_points(
    path: &HolonomicPath,
    scene: &Scene,
    robot: &RobotBody,
    h: f64,
) -> Vec<Configuration> {
    assert!(h > 0.0);
    let probes = [
        Vector3::new(h, 0.0, 0.0),
        Vector3::new(-h, 0.0, 0.0),
        Vector3::new(0.0, h, 0.0),
        Vector3::new(0.0, -h, 0.0),
        Vector3::new(0.0, 0.0, h),
        Vector3::new(0.0, 0.0, -h),
    ];
    path.resample(h)
        .into_iter()
        .filter(|c| {
            let blocked = probes
                .iter()
                .filter(|offset| {
                    let probe = Configuration::new(c.p + **offset, c.r);
                    is_collision(&probe, scene, robot)
                })
                .count();
            blocked >= 4
        })
        .collect()
}

/// Single-linkage agglomeration with positional linkage radius; the cluster
/// count adapts to the data. Returns per-cluster centroids ordered by the
/// earliest member along the input sequence.
pub fn cluster_centroids(points: &[Configuration], link_radius: f64) -> Vec<Configuration> {
    cluster_members(points, link_radius)
        .into_iter()
        .map(|members| centroid(&members))
        .collect()
}

/// Cluster membership backing [`cluster_centroids`]; exposed so callers can
/// keep the raw member points.
pub fn cluster_members(points: &[Configuration], link_radius: f64) -> Vec<Vec<Configuration>> {
    if points.is_empty() {
        return Vec::new();
    }
    // Union-find over pairs within the linkage radius.
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let root = find(parent, parent[i]);
            parent[i] = root;
        }
        parent[i]
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (points[i].p - points[j].p).norm() <= link_radius {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a] = b;
                }
            }
        }
    }
    let mut order: Vec<usize> = Vec::new();
    let mut groups: Vec<Vec<Configuration>> = Vec::new();
    let mut root_to_group: std::collections::HashMap<usize, usize> =
        std::collections::HashMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        let g = *root_to_group.entry(root).or_insert_with(|| {
            order.push(i);
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(points[i]);
    }
    groups
}

fn centroid(members: &[Configuration]) -> Configuration {
    let mean_p = members.iter().map(|c| c.p).sum::<Vector3<f64>>() / members.len() as f64;
    // Chordal mean of the quaternions, sign-aligned to the first member,
    // snapped back onto the member closest to it. Snapping keeps the result a
    // real traversal attitude even when members straddle distinct tilt
    // branches whose raw mean would wash out.
    let reference = members[0].r.into_inner();
    let mut acc = nalgebra::Vector4::zeros();
    for c in members {
        let mut q = c.r.into_inner();
        if q.dot(&reference) < 0.0 {
            q = -q;
        }
        acc += q.coords;
    }
    let q = nalgebra::Quaternion::from_parts(acc.w, acc.xyz());
    let mean_q = UnitQuaternion::new_normalize(q);
    let snapped = members
        .iter()
        .map(|c| c.r)
        .min_by(|a, b| {
            a.angle_to(&mean_q)
                .partial_cmp(&b.angle_to(&mean_q))
                .unwrap()
        })
        .expect("non-empty cluster");
    Configuration::new(mean_p, snapped)
}

/// Unit tangent of the path at the resampled point nearest to `center`
/// (earlier index wins ties), oriented along increasing path parameter.
pub fn path_tangent(path: &HolonomicPath, center: &Configuration, h: f64) -> Vector3<f64> {
    let samples = path.resample(h);
    assert!(samples.len() >= 2, "path must have at least two waypoints");
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, s) in samples.iter().enumerate() {
        let d = (s.p - center.p).norm();
        if d < best_d - 1e-15 {
            best_d = d;
            best = i;
        }
    }
    let hi = (best + 1).min(samples.len() - 1);
    let lo = best.saturating_sub(1);
    let t = samples[hi].p - samples[lo].p;
    let n = t.norm();
    if n > 1e-12 {
        t / n
    } else {
        Vector3::x()
    }
}

/// Refines a cluster center by sampling positions uniformly in the disk of
/// radius `rho` in the plane perpendicular to `tangent`, with orientations
/// perturbed within `theta_max`. Scoring considers only obstacles within the
/// `delta`-ball around the center. Returns the best-scoring collision-free
/// configuration; the center itself competes when it is collision-free.
///
/// Perturbed orientations that drop the thrust axis to the horizon or below
/// are discarded: the vehicle cannot hold or recover them, so they are never
/// useful traversal attitudes no matter their clearance.
#[allow(clippy::too_many_arguments)]
pub fn max_margin_sample(
    center: &Configuration,
    tangent: &Vector3<f64>,
    scene: &Scene,
    robot: &RobotBody,
    rho: f64,
    n_samples: usize,
    theta_max: f64,
    delta: f64,
    objective: MarginObjective,
    rng: &mut ChaCha8Rng,
) -> Result<Configuration, NarrowError> {
    assert!(n_samples >= 1);
    let nearby: Vec<Obstacle> = scene
        .obstacles
        .iter()
        .filter(|o| point_obstacle_distance(&center.p, o) <= delta)
        .copied()
        .collect();

    // Orthonormal frame of the perpendicular plane.
    let t = tangent.normalize();
    let helper = if t.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let n1 = t.cross(&helper).normalize();
    let n2 = t.cross(&n1);

    let mut candidates: Vec<Configuration> = Vec::with_capacity(n_samples + 1);
    if !is_collision(center, scene, robot) {
        candidates.push(*center);
    }
    let mut colliding: Vec<Configuration> = Vec::new();
    for _ in 0..n_samples {
        let radius = rho * rng.gen::<f64>().sqrt();
        let phi = rng.gen::<f64>() * std::f64::consts::TAU;
        let p = center.p + radius * (phi.cos() * n1 + phi.sin() * n2);
        let axis = {
            let v = Vector3::new(
                rng.sample::<f64, _>(rand_distr::StandardNormal),
                rng.sample::<f64, _>(rand_distr::StandardNormal),
                rng.sample::<f64, _>(rand_distr::StandardNormal),
            );
            if v.norm() > 1e-9 {
                v.normalize()
            } else {
                Vector3::z()
            }
        };
        let angle = rng.gen::<f64>() * theta_max;
        let r = UnitQuaternion::from_scaled_axis(axis * angle) * center.r;
        // Thrust axis must stay above the horizon (tilt < 88 deg).
        if (r * Vector3::z()).z < 0.035 {
            continue;
        }
        let c = Configuration::new(p, r);
        if is_collision(&c, scene, robot) {
            colliding.push(c);
        } else {
            candidates.push(c);
        }
    }
    if candidates.is_empty() {
        return Err(NarrowError::PassageBlocked);
    }

    let score = |c: &Configuration| -> f64 {
        match objective {
            MarginObjective::Clearance => margin_against(c, &nearby, robot),
            // Smaller summed squared distance ranks higher under the
            // alternative objective, so negate it.
            MarginObjective::SummedSquaredDistance => {
                -colliding
                    .iter()
                    .map(|col| (c.p - col.p).norm_squared())
                    .sum::<f64>()
            }
        }
    };

    // First candidate (the center, when free) wins ties.
    let mut best = candidates[0];
    let mut best_score = score(&best);
    for c in &candidates[1..] {
        let s = score(c);
        if s > best_score {
            best_score = s;
            best = *c;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{wall_with_hole, Bounds, GoalTolerance};
    use nalgebra::Vector2;
    use rand::SeedableRng;

    fn robot() -> RobotBody {
        RobotBody::new(Vector3::new(0.25, 0.25, 0.08))
    }

    fn scene_with(obstacles: Vec<Obstacle>) -> Scene {
        Scene {
            bounds: Bounds::new(Vector3::new(-3.0, -2.0, -2.0), Vector3::new(3.0, 2.0, 2.0)),
            obstacles,
            start: Configuration::identity_at(Vector3::new(-2.0, 0.0, 0.0)),
            goal: Configuration::identity_at(Vector3::new(2.0, 0.0, 0.0)),
            goal_tolerance: GoalTolerance {
                position: 0.3,
                angle: 0.5,
            },
        }
    }

    fn hole_wall(tilt_deg: f64, x: f64) -> Vec<Obstacle> {
        wall_with_hole(
            &Configuration::identity_at(Vector3::new(x, 0.0, 0.0)),
            &Vector3::new(0.1, 2.0, 2.0),
            &Vector2::new(0.0, 0.0),
            &Vector2::new(0.5, 0.22),
            tilt_deg.to_radians(),
        )
        .unwrap()
    }

    fn straight_path() -> HolonomicPath {
        HolonomicPath::from_waypoints(vec![
            Configuration::identity_at(Vector3::new(-2.0, 0.0, 0.0)),
            Configuration::identity_at(Vector3::new(2.0, 0.0, 0.0)),
        ])
    }

    #[test]
    fn open_space_has_no_narrow_points() {
        let scene = scene_with(vec![]);
        let pts = narrow_points(&straight_path(), &scene, &robot(), 0.3);
        assert!(pts.is_empty());
    }

    #[test]
    fn hole_waypoint_is_detected() {
        let scene = scene_with(hole_wall(0.0, 0.0));
        let pts = narrow_points(&straight_path(), &scene, &robot(), 0.3);
        assert!(!pts.is_empty());
        // Detected points sit near the wall plane.
        for p in &pts {
            assert!(p.p.x.abs() < 0.5, "narrow point at x = {}", p.p.x);
        }
    }

    #[test]
    fn flat_wall_beside_path_is_not_narrow() {
        // A solid slab under the path blocks at most one probe direction.
        let slab = Obstacle::axis_aligned(Vector3::new(0.0, 0.0, -0.4), Vector3::new(3.0, 2.0, 0.1));
        let scene = scene_with(vec![slab]);
        let pts = narrow_points(&straight_path(), &scene, &robot(), 0.3);
        assert!(pts.is_empty());
    }

    #[test]
    fn narrow_points_are_a_subset_of_the_resampled_path() {
        let scene = scene_with(hole_wall(0.0, 0.0));
        let h = 0.3;
        let resampled = straight_path().resample(h);
        for p in narrow_points(&straight_path(), &scene, &robot(), h) {
            assert!(resampled.iter().any(|r| (r.p - p.p).norm() < 1e-12));
        }
    }

    #[test]
    fn single_point_clusters_to_itself() {
        let c = Configuration::identity_at(Vector3::new(0.3, -0.1, 0.2));
        let out = cluster_centroids(&[c], 0.5);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0], c);
    }

    #[test]
    fn distant_points_form_two_clusters() {
        let a = Configuration::identity_at(Vector3::zeros());
        let b = Configuration::identity_at(Vector3::new(2.0, 0.0, 0.0));
        let out = cluster_centroids(&[a, b], 0.5);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn dual_wall_scene_yields_one_cluster_per_hole() {
        let mut obstacles = hole_wall(50.0, -1.2);
        obstacles.extend(hole_wall(50.0, 1.2));
        let scene = scene_with(obstacles);
        let q = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), 50_f64.to_radians());
        let path = HolonomicPath::from_waypoints(vec![
            Configuration::identity_at(Vector3::new(-2.0, 0.0, 0.0)),
            Configuration::new(Vector3::new(-1.2, 0.0, 0.0), q),
            Configuration::identity_at(Vector3::new(0.0, 0.0, 0.0)),
            Configuration::new(Vector3::new(1.2, 0.0, 0.0), q),
            Configuration::identity_at(Vector3::new(2.0, 0.0, 0.0)),
        ]);
        let pts = narrow_points(&path, &scene, &robot(), 0.3);
        assert!(!pts.is_empty());
        let clusters = cluster_centroids(&pts, 0.6);
        assert_eq!(clusters.len(), 2);
    }

    #[test]
    fn clustering_is_permutation_invariant() {
        let pts: Vec<Configuration> = (0..12)
            .map(|i| {
                let x = if i < 6 { -1.0 } else { 1.0 };
                Configuration::identity_at(Vector3::new(x + 0.01 * i as f64, 0.0, 0.0))
            })
            .collect();
        let mut shuffled = pts.clone();
        shuffled.reverse();
        shuffled.swap(0, 5);
        let mut a = cluster_centroids(&pts, 0.4);
        let mut b = cluster_centroids(&shuffled, 0.4);
        let key = |c: &Configuration| (c.p.x * 1e9) as i64;
        a.sort_by_key(key);
        b.sort_by_key(key);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x.p - y.p).norm() < 1e-9);
        }
    }

    #[test]
    fn tangent_of_straight_path_is_constant() {
        let t = path_tangent(
            &straight_path(),
            &Configuration::identity_at(Vector3::new(0.3, 0.2, 0.0)),
            0.25,
        );
        assert!((t - Vector3::x()).norm() < 1e-12);
    }

    #[test]
    fn tangent_tie_break_prefers_earlier_index() {
        let path = HolonomicPath::from_waypoints(vec![
            Configuration::identity_at(Vector3::new(-1.0, 0.0, 0.0)),
            Configuration::identity_at(Vector3::new(0.0, 0.0, 0.0)),
            Configuration::identity_at(Vector3::new(0.0, 1.0, 0.0)),
        ]);
        // Equidistant from the samples at (-0.5, 0, 0) and (0, 0.5, 0).
        let center = Configuration::identity_at(Vector3::new(-0.25, 0.25, 0.0));
        let t = path_tangent(&path, &center, 0.5);
        // Earlier sample wins, so the tangent points along +x.
        assert!(t.x > 0.9, "tangent {t:?}");
    }

    #[test]
    fn tangent_through_tilted_hole_tracks_the_hole_axis() {
        let tilt = 50_f64.to_radians();
        let scene = scene_with(hole_wall(50.0, 0.0));
        let q = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), tilt);
        let axis = q * Vector3::x();
        // A path that threads the hole along its axis.
        let path = HolonomicPath::from_waypoints(vec![
            Configuration::identity_at(Vector3::new(-2.0, 0.0, 0.0) ),
            Configuration::new(-axis * 0.8, q),
            Configuration::new(axis * 0.8, q),
            Configuration::identity_at(Vector3::new(2.0, 0.0, 0.0)),
        ]);
        let pts = narrow_points(&path, &scene, &robot(), 0.25);
        assert!(!pts.is_empty());
        let center = cluster_centroids(&pts, 0.6)[0];
        let t = path_tangent(&path, &center, 0.25);
        let angle = t.dot(&axis).abs().min(1.0).acos();
        assert!(angle < 25_f64.to_radians(), "tangent off by {} deg", angle.to_degrees());
    }

    #[test]
    fn empty_scene_refinement_returns_the_center() {
        let scene = scene_with(vec![]);
        let center = Configuration::identity_at(Vector3::new(0.1, 0.2, -0.3));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = max_margin_sample(
            &center,
            &Vector3::x(),
            &scene,
            &robot(),
            0.4,
            64,
            0.2,
            1.5,
            MarginObjective::Clearance,
            &mut rng,
        )
        .unwrap();
        assert_eq!(out, center);
    }

    #[test]
    fn refinement_recenters_in_a_straight_hole() {
        // Aperture sized so side and lintel clearances match, which makes the
        // hole center the unique clearance optimum.
        let wall = wall_with_hole(
            &Configuration::identity_at(Vector3::zeros()),
            &Vector3::new(0.1, 2.0, 2.0),
            &Vector2::new(0.0, 0.0),
            &Vector2::new(0.39, 0.22),
            0.0,
        )
        .unwrap();
        let scene = scene_with(wall);
        // Start offset toward the hole edge.
        let center = Configuration::identity_at(Vector3::new(0.0, 0.1, 0.1));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = max_margin_sample(
            &center,
            &Vector3::x(),
            &scene,
            &robot(),
            0.45,
            30_000,
            0.0,
            1.5,
            MarginObjective::Clearance,
            &mut rng,
        )
        .unwrap();
        // Grid search over the disk at 1 cm resolution for the best position.
        let mut best = f64::NEG_INFINITY;
        let mut best_p = center.p;
        let mut y: f64 = -0.45;
        while y <= 0.45 {
            let mut z: f64 = -0.45;
            while z <= 0.45 {
                if (y * y + z * z).sqrt() <= 0.45 {
                    let c = Configuration::new(center.p + Vector3::new(0.0, y, z), center.r);
                    if !is_collision(&c, &scene, &robot()) {
                        let m = crate::world::margin(&c, &scene, &robot());
                        if m > best {
                            best = m;
                            best_p = c.p;
                        }
                    }
                }
                z += 0.01;
            }
            y += 0.01;
        }
        // The hole's geometric center is the optimum; both the refinement and
        // the grid land within 10% of the aperture size of it.
        let hole_center = Vector3::new(0.0, 0.0, 0.0);
        assert!((best_p - hole_center).norm() < 0.1);
        assert!((out.p - hole_center).norm() < 0.1, "refined to {:?}", out.p);
        // Clearance within 5% of the grid optimum.
        let got = crate::world::margin(&out, &scene, &robot());
        assert!(got >= 0.95 * best, "clearance {got} vs grid {best}");
    }

    #[test]
    fn refinement_never_scores_below_a_free_center() {
        let scene = scene_with(hole_wall(0.0, 0.0));
        let center = Configuration::identity_at(Vector3::zeros());
        assert!(!is_collision(&center, &scene, &robot()));
        let base = crate::world::margin(&center, &scene, &robot());
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = max_margin_sample(
                &center,
                &Vector3::x(),
                &scene,
                &robot(),
                0.45,
                128,
                10_f64.to_radians(),
                1.5,
                MarginObjective::Clearance,
                &mut rng,
            )
            .unwrap();
            let got = crate::world::margin(&out, &scene, &robot());
            assert!(got >= base - 1e-12);
            // Perpendicular-plane constraint.
            assert!((out.p - center.p).dot(&Vector3::x()).abs() < 1e-6);
        }
    }

    #[test]
    fn fully_blocked_plane_is_an_error() {
        // Solid wall, no hole: everything in the perpendicular disk collides.
        let scene = scene_with(vec![Obstacle::axis_aligned(
            Vector3::zeros(),
            Vector3::new(0.3, 2.0, 2.0),
        )]);
        let center = Configuration::identity_at(Vector3::zeros());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = max_margin_sample(
            &center,
            &Vector3::x(),
            &scene,
            &robot(),
            0.4,
            64,
            0.1,
            1.5,
            MarginObjective::Clearance,
            &mut rng,
        );
        assert!(matches!(out, Err(NarrowError::PassageBlocked)));
    }
}
