//! Scene representation and rigid-body collision queries.
//!
//! The workspace is an axis-aligned box populated with oriented-box obstacles.
//! The robot is a single body-aligned bounding box. All queries are pure
//! functions over immutable data and safe to call from multiple threads.

use nalgebra::{Matrix3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rigid-body pose: position plus unit quaternion (scalar-first).
///
/// Quaternions are renormalized on construction and canonicalized to the
/// `q_r >= 0` hemisphere, so `q` and `-q` compare equal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub p: Vector3<f64>,
    pub r: UnitQuaternion<f64>,
}

impl Configuration {
    pub fn new(p: Vector3<f64>, r: UnitQuaternion<f64>) -> Self {
        Self {
            p,
            r: canonical_hemisphere(r),
        }
    }

    pub fn identity_at(p: Vector3<f64>) -> Self {
        Self::new(p, UnitQuaternion::identity())
    }

    /// Geodesic rotation angle to another configuration, in radians.
    pub fn angle_to(&self, other: &Configuration) -> f64 {
        self.r.angle_to(&other.r)
    }
}

/// Forces the scalar component non-negative; `q` and `-q` denote one rotation.
pub fn canonical_hemisphere(r: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    if r.w < 0.0 {
        UnitQuaternion::new_unchecked(-r.into_inner())
    } else {
        r
    }
}

/// Proper rotations that map a box with the given half extents onto itself:
/// always the three half-turns, plus quarter-turns about an axis whose two
/// transverse extents match. Returned as the closure of those generators.
pub fn box_symmetries(half_extents: &Vector3<f64>) -> Vec<UnitQuaternion<f64>> {
    use std::f64::consts::FRAC_PI_2;
    let eq = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (a + b);
    let mut generators = vec![
        UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI),
        UnitQuaternion::from_axis_angle(&Vector3::y_axis(), std::f64::consts::PI),
    ];
    if eq(half_extents.x, half_extents.y) {
        generators.push(UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2));
    }
    if eq(half_extents.y, half_extents.z) {
        generators.push(UnitQuaternion::from_axis_angle(&Vector3::x_axis(), FRAC_PI_2));
    }
    if eq(half_extents.x, half_extents.z) {
        generators.push(UnitQuaternion::from_axis_angle(&Vector3::y_axis(), FRAC_PI_2));
    }

    let mut group: Vec<UnitQuaternion<f64>> = vec![UnitQuaternion::identity()];
    let close_to = |g: &UnitQuaternion<f64>, set: &[UnitQuaternion<f64>]| {
        set.iter().any(|s| g.angle_to(s) < 1e-9)
    };
    // Generator closure; the group has at most 24 elements.
    let mut changed = true;
    while changed && group.len() <= 24 {
        changed = false;
        let snapshot = group.clone();
        for g in &generators {
            for s in &snapshot {
                let candidate = s * g;
                if !close_to(&candidate, &group) {
                    group.push(candidate);
                    changed = true;
                }
            }
        }
    }
    group
}

/// Representative of `r` modulo the box symmetry group with the smallest
/// rotation angle from identity. Collision queries cannot distinguish the
/// group members, so paths may carry any of them; dynamics can.
pub fn canonical_box_attitude(
    r: &UnitQuaternion<f64>,
    half_extents: &Vector3<f64>,
) -> UnitQuaternion<f64> {
    let mut best = *r;
    let mut best_angle = r.angle();
    for s in box_symmetries(half_extents) {
        let candidate = r * s;
        if candidate.angle() < best_angle {
            best_angle = candidate.angle();
            best = candidate;
        }
    }
    canonical_hemisphere(best)
}

/// The swing part of `r`: the attitude pointing the body z-axis the same way
/// with zero twist about it.
pub fn swing_attitude(r: &UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let q = r.into_inner();
    // Twist about body z is the (w, z) slice of the quaternion.
    let twist_norm = (q.w * q.w + q.k * q.k).sqrt();
    if twist_norm < 1e-12 {
        // Pure half-turn swing; already twist-free.
        return canonical_hemisphere(*r);
    }
    let twist = UnitQuaternion::new_unchecked(nalgebra::Quaternion::new(
        q.w / twist_norm,
        0.0,
        0.0,
        q.k / twist_norm,
    ));
    canonical_hemisphere(r * twist.inverse())
}

/// Interpolates two configurations: linear in position, slerp in orientation.
pub fn interpolate(a: &Configuration, b: &Configuration, t: f64) -> Configuration {
    Configuration::new(a.p + (b.p - a.p) * t, a.r.slerp(&b.r, t))
}

/// Collision geometry of the quadcopter: a body-aligned bounding box.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RobotBody {
    pub half_extents: Vector3<f64>,
}

impl RobotBody {
    pub fn new(half_extents: Vector3<f64>) -> Self {
        assert!(
            half_extents.iter().all(|h| *h > 0.0),
            "robot half-extents must be positive"
        );
        Self { half_extents }
    }

    /// Radius of the sphere circumscribing the body box.
    pub fn circumscribed_radius(&self) -> f64 {
        self.half_extents.norm()
    }
}

/// A static oriented-box obstacle.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: Vector3<f64>,
    pub half_extents: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Obstacle {
    pub fn new(
        center: Vector3<f64>,
        half_extents: Vector3<f64>,
        orientation: UnitQuaternion<f64>,
    ) -> Self {
        assert!(
            half_extents.iter().all(|h| *h > 0.0),
            "obstacle half-extents must be positive"
        );
        Self {
            center,
            half_extents,
            orientation: canonical_hemisphere(orientation),
        }
    }

    pub fn axis_aligned(center: Vector3<f64>, half_extents: Vector3<f64>) -> Self {
        Self::new(center, half_extents, UnitQuaternion::identity())
    }

    fn as_obb(&self) -> Obb {
        Obb {
            center: self.center,
            half: self.half_extents,
            rot: self.orientation.to_rotation_matrix().into_inner(),
        }
    }
}

/// Axis-aligned workspace bounds.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Bounds {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        assert!(
            (0..3).all(|i| min[i] < max[i]),
            "degenerate workspace bounds"
        );
        Self { min, max }
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }

    pub fn contains_point(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// Goal acceptance ball: position radius in meters, orientation in radians.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GoalTolerance {
    pub position: f64,
    pub angle: f64,
}

/// A planning problem instance: workspace, obstacles and the start/goal pair.
#[derive(Clone, Debug)]
pub struct Scene {
    pub bounds: Bounds,
    pub obstacles: Vec<Obstacle>,
    pub start: Configuration,
    pub goal: Configuration,
    pub goal_tolerance: GoalTolerance,
}

impl Scene {
    pub fn is_goal(&self, c: &Configuration) -> bool {
        (c.p - self.goal.p).norm() <= self.goal_tolerance.position
            && c.angle_to(&self.goal) <= self.goal_tolerance.angle
    }
}

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("hole does not fit strictly inside the wall footprint")]
    HoleExceedsWall,
    #[error("start configuration is in collision")]
    StartInCollision,
    #[error("goal configuration is in collision")]
    GoalInCollision,
}

/// Internal oriented-box form used by the collision kernels: rotation matrix
/// columns are the box axes in world coordinates.
#[derive(Clone, Copy, Debug)]
struct Obb {
    center: Vector3<f64>,
    half: Vector3<f64>,
    rot: Matrix3<f64>,
}

impl Obb {
    fn axis(&self, i: usize) -> Vector3<f64> {
        self.rot.column(i).into()
    }

    fn corners(&self) -> [Vector3<f64>; 8] {
        let ax = self.axis(0) * self.half.x;
        let ay = self.axis(1) * self.half.y;
        let az = self.axis(2) * self.half.z;
        let c = self.center;
        [
            c - ax - ay - az,
            c - ax - ay + az,
            c - ax + ay - az,
            c - ax + ay + az,
            c + ax - ay - az,
            c + ax - ay + az,
            c + ax + ay - az,
            c + ax + ay + az,
        ]
    }

    /// Point of this box closest to `p`: clamp in the box frame.
    fn closest_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let local = self.rot.transpose() * (p - self.center);
        let clamped = Vector3::new(
            local.x.clamp(-self.half.x, self.half.x),
            local.y.clamp(-self.half.y, self.half.y),
            local.z.clamp(-self.half.z, self.half.z),
        );
        self.center + self.rot * clamped
    }

    /// Half-projection radius of the box onto a unit axis.
    fn projection_radius(&self, axis: &Vector3<f64>) -> f64 {
        self.half.x * self.axis(0).dot(axis).abs()
            + self.half.y * self.axis(1).dot(axis).abs()
            + self.half.z * self.axis(2).dot(axis).abs()
    }
}

fn robot_obb(c: &Configuration, robot: &RobotBody) -> Obb {
    Obb {
        center: c.p,
        half: robot.half_extents,
        rot: c.r.to_rotation_matrix().into_inner(),
    }
}

/// Separating-axis overlap test between two oriented boxes. Tests the 6 face
/// normals and the 9 edge cross products; touching boxes count as overlapping.
fn obb_overlap(a: &Obb, b: &Obb) -> bool {
    separation_gap(a, b) <= 0.0
}

/// Largest separation over the 15 SAT axes. Positive means disjoint with at
/// least that gap along some axis; non-positive means overlapping.
fn separation_gap(a: &Obb, b: &Obb) -> f64 {
    let d = b.center - a.center;
    let mut best = f64::NEG_INFINITY;
    let mut test = |axis: Vector3<f64>| -> bool {
        let len2 = axis.norm_squared();
        if len2 < 1e-24 {
            // Degenerate cross product: parallel edges, axis covered elsewhere.
            return false;
        }
        let axis = axis / len2.sqrt();
        let gap = d.dot(&axis).abs() - a.projection_radius(&axis) - b.projection_radius(&axis);
        if gap > best {
            best = gap;
        }
        // Early out once any separating axis is found.
        gap > 0.0
    };
    for i in 0..3 {
        if test(a.axis(i)) {
            return best;
        }
    }
    for j in 0..3 {
        if test(b.axis(j)) {
            return best;
        }
    }
    for i in 0..3 {
        for j in 0..3 {
            if test(a.axis(i).cross(&b.axis(j))) {
                return best;
            }
        }
    }
    best
}

/// Euclidean distance between two disjoint convex boxes via alternating
/// closest-point projection. Returns 0 for overlapping boxes.
fn obb_distance(a: &Obb, b: &Obb) -> f64 {
    if obb_overlap(a, b) {
        return 0.0;
    }
    let mut x = a.center;
    let mut y = b.closest_point(&x);
    let mut dist = f64::INFINITY;
    for _ in 0..256 {
        x = a.closest_point(&y);
        y = b.closest_point(&x);
        let d = (x - y).norm();
        if dist - d < 1e-12 {
            return d;
        }
        dist = d;
    }
    dist
}

/// True iff the robot box at pose `c` hits an obstacle or leaves the
/// workspace bounds. Deterministic; touching counts as collision.
pub fn is_collision(c: &Configuration, scene: &Scene, robot: &RobotBody) -> bool {
    let body = robot_obb(c, robot);
    // The body must lie fully inside the workspace box.
    for corner in body.corners() {
        if !scene.bounds.contains_point(&corner) {
            return true;
        }
    }
    scene.obstacles.iter().any(|o| obb_overlap(&body, &o.as_obb()))
}

/// Number of interpolation steps needed to sweep `a -> b` with position steps
/// at most `resolution` and rotation steps bounded through the robot's
/// circumscribed radius.
fn sweep_steps(a: &Configuration, b: &Configuration, robot: &RobotBody, resolution: f64) -> usize {
    let lin = (b.p - a.p).norm() / resolution;
    let ang = a.angle_to(b) * robot.circumscribed_radius() / resolution;
    lin.max(ang).ceil().max(1.0) as usize
}

/// Checks a straight configuration-space edge, endpoints included.
pub fn edge_is_free(
    c1: &Configuration,
    c2: &Configuration,
    scene: &Scene,
    robot: &RobotBody,
    resolution: f64,
) -> bool {
    assert!(resolution > 0.0, "edge resolution must be positive");
    let n = sweep_steps(c1, c2, robot, resolution);
    for k in 0..=n {
        let c = interpolate(c1, c2, k as f64 / n as f64);
        if is_collision(&c, scene, robot) {
            return false;
        }
    }
    true
}

/// Minimum clearance from the robot box at `c` to any obstacle. Workspace
/// walls are excluded, so an empty scene reports infinite clearance. An
/// in-collision pose reports 0.
pub fn margin(c: &Configuration, scene: &Scene, robot: &RobotBody) -> f64 {
    margin_against(c, &scene.obstacles, robot)
}

/// Clearance restricted to a caller-selected obstacle subset.
pub fn margin_against(c: &Configuration, obstacles: &[Obstacle], robot: &RobotBody) -> f64 {
    let body = robot_obb(c, robot);
    obstacles
        .iter()
        .map(|o| obb_distance(&body, &o.as_obb()))
        .fold(f64::INFINITY, f64::min)
}

/// Distance from a point to an obstacle box (0 inside).
pub fn point_obstacle_distance(p: &Vector3<f64>, o: &Obstacle) -> f64 {
    (o.as_obb().closest_point(p) - p).norm()
}

/// Decomposes a rectangular wall with a rectangular opening into four boxes:
/// two full-height side strips and top/bottom lintels. The whole assembly is
/// rotated by `tilt` about the in-wall horizontal axis through the hole
/// center, so the opening's passage direction makes the angle `tilt` with the
/// nominal wall normal.
///
/// Wall frame: local x is the wall normal (thickness), local y the in-wall
/// horizontal, local z the in-wall vertical. `hole_center` and
/// `hole_half_extents` are (y, z) coordinates in that frame.
pub fn wall_with_hole(
    wall_pose: &Configuration,
    wall_half_extents: &Vector3<f64>,
    hole_center: &Vector2<f64>,
    hole_half_extents: &Vector2<f64>,
    tilt: f64,
) -> Result<Vec<Obstacle>, WorldError> {
    let (hx, hy, hz) = (
        wall_half_extents.x,
        wall_half_extents.y,
        wall_half_extents.z,
    );
    let (cy, cz) = (hole_center.x, hole_center.y);
    let (ay, az) = (hole_half_extents.x, hole_half_extents.y);
    if ay <= 0.0 || az <= 0.0 || cy.abs() + ay >= hy || cz.abs() + az >= hz {
        return Err(WorldError::HoleExceedsWall);
    }

    // Frame pivoted on the hole center, rotated about local y by the tilt.
    let pivot = wall_pose.p + wall_pose.r * Vector3::new(0.0, cy, cz);
    let rot = wall_pose.r * UnitQuaternion::from_axis_angle(&Vector3::y_axis(), tilt);

    // Slab extents relative to the hole center, in the tilted frame.
    let y_lo = -cy - hy;
    let y_hi = -cy + hy;
    let z_lo = -cz - hz;
    let z_hi = -cz + hz;

    let make = |y0: f64, y1: f64, z0: f64, z1: f64| {
        let local = Vector3::new(0.0, (y0 + y1) * 0.5, (z0 + z1) * 0.5);
        Obstacle::new(
            pivot + rot * local,
            Vector3::new(hx, (y1 - y0) * 0.5, (z1 - z0) * 0.5),
            rot,
        )
    };

    Ok(vec![
        make(y_lo, -ay, z_lo, z_hi),  // left strip
        make(ay, y_hi, z_lo, z_hi),   // right strip
        make(-ay, ay, z_lo, -az),     // below the opening
        make(-ay, ay, az, z_hi),      // above the opening
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn empty_scene() -> Scene {
        Scene {
            bounds: Bounds::new(Vector3::new(-5.0, -5.0, -5.0), Vector3::new(5.0, 5.0, 5.0)),
            obstacles: vec![],
            start: Configuration::identity_at(Vector3::new(-4.0, 0.0, 0.0)),
            goal: Configuration::identity_at(Vector3::new(4.0, 0.0, 0.0)),
            goal_tolerance: GoalTolerance {
                position: 0.3,
                angle: 0.5,
            },
        }
    }

    fn small_robot() -> RobotBody {
        RobotBody::new(Vector3::new(0.25, 0.25, 0.08))
    }

    fn random_quat(rng: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
        let v = Vector3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
        let angle = rng.gen::<f64>() * PI;
        UnitQuaternion::from_scaled_axis(v.normalize() * angle)
    }

    #[test]
    fn quaternion_canonicalized_on_construction() {
        let q = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), 3.0);
        let c = Configuration::new(Vector3::zeros(), q);
        assert!(c.r.w >= 0.0);
        let flipped = Configuration::new(Vector3::zeros(), UnitQuaternion::new_unchecked(-q.into_inner()));
        assert_relative_eq!(c.r.into_inner(), flipped.r.into_inner(), epsilon = 1e-12);
        assert!((c.r.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_scene_center_is_free() {
        let scene = empty_scene();
        let c = Configuration::identity_at(scene.bounds.center());
        assert!(!is_collision(&c, &scene, &small_robot()));
    }

    #[test]
    fn pose_inside_obstacle_collides() {
        let mut scene = empty_scene();
        scene.obstacles.push(Obstacle::axis_aligned(
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.5, 0.5, 0.5),
        ));
        let c = Configuration::identity_at(Vector3::new(1.0, 0.0, 0.0));
        assert!(is_collision(&c, &scene, &small_robot()));
    }

    #[test]
    fn leaving_workspace_counts_as_collision() {
        let scene = empty_scene();
        let c = Configuration::identity_at(Vector3::new(4.9, 0.0, 0.0));
        assert!(is_collision(&c, &scene, &small_robot()));
    }

    /// 50-degree opening: an untilted pose at the hole center is blocked while
    /// the aperture-aligned pose passes. Both outcomes cross-checked against
    /// the surface-sampling reference test.
    #[test]
    fn tilted_hole_requires_matching_attitude() {
        let mut scene = empty_scene();
        let tilt = 50.0_f64.to_radians();
        let wall = wall_with_hole(
            &Configuration::identity_at(Vector3::zeros()),
            &Vector3::new(0.1, 2.0, 2.0),
            &Vector2::new(0.0, 0.0),
            &Vector2::new(0.5, 0.25),
            tilt,
        )
        .unwrap();
        scene.obstacles = wall.clone();
        let robot = RobotBody::new(Vector3::new(0.3, 0.3, 0.1));

        let level = Configuration::identity_at(Vector3::zeros());
        let aligned = Configuration::new(
            Vector3::zeros(),
            UnitQuaternion::from_axis_angle(&Vector3::y_axis(), tilt),
        );
        assert!(is_collision(&level, &scene, &robot));
        assert!(!is_collision(&aligned, &scene, &robot));

        // Same verdicts from the independent sampling oracle.
        assert!(oracle::pose_collides_sampled(&level, &scene.obstacles, &robot, 0.01));
        assert!(!oracle::pose_collides_sampled(&aligned, &scene.obstacles, &robot, 0.01));
    }

    #[test]
    fn wall_with_hole_zero_tilt_is_axis_aligned() {
        let boxes = wall_with_hole(
            &Configuration::identity_at(Vector3::zeros()),
            &Vector3::new(0.1, 2.0, 2.0),
            &Vector2::new(0.3, -0.2),
            &Vector2::new(0.5, 0.4),
            0.0,
        )
        .unwrap();
        assert_eq!(boxes.len(), 4);
        for b in &boxes {
            assert!(b.orientation.angle() < 1e-12);
        }
        // Probe at the hole center passes.
        let mut scene = empty_scene();
        scene.obstacles = boxes;
        let probe = Configuration::identity_at(Vector3::new(0.0, 0.3, -0.2));
        assert!(!is_collision(&probe, &scene, &small_robot()));
    }

    #[test]
    fn wall_with_hole_tilt_angle_matches_normal() {
        for deg in [30.0, 50.0, 85.0] {
            let tilt = (deg as f64).to_radians();
            let boxes = wall_with_hole(
                &Configuration::identity_at(Vector3::zeros()),
                &Vector3::new(0.1, 2.0, 2.0),
                &Vector2::new(0.0, 0.0),
                &Vector2::new(0.5, 0.25),
                tilt,
            )
            .unwrap();
            let normal = boxes[0].orientation * Vector3::x_axis().into_inner();
            let angle = normal.dot(&Vector3::x()).acos();
            assert_relative_eq!(angle, tilt, epsilon = 1e-12);
        }
    }

    #[test]
    fn oversized_hole_is_rejected() {
        let r = wall_with_hole(
            &Configuration::identity_at(Vector3::zeros()),
            &Vector3::new(0.1, 1.0, 1.0),
            &Vector2::new(0.0, 0.0),
            &Vector2::new(1.0, 0.4),
            0.0,
        );
        assert!(r.is_err());
    }

    #[test]
    fn zero_length_edge_is_free() {
        let scene = empty_scene();
        let c = Configuration::identity_at(Vector3::zeros());
        assert!(edge_is_free(&c, &c, &scene, &small_robot(), 0.01));
    }

    #[test]
    fn edge_through_solid_wall_is_blocked() {
        let mut scene = empty_scene();
        scene.obstacles.push(Obstacle::axis_aligned(
            Vector3::zeros(),
            Vector3::new(0.1, 5.0, 5.0),
        ));
        let a = Configuration::identity_at(Vector3::new(-2.0, 0.0, 0.0));
        let b = Configuration::identity_at(Vector3::new(2.0, 0.0, 0.0));
        assert!(!edge_is_free(&a, &b, &scene, &small_robot(), 0.01));
    }

    #[test]
    fn edge_through_hole_agrees_with_fine_resolution() {
        let mut scene = empty_scene();
        let tilt = 50.0_f64.to_radians();
        scene.obstacles = wall_with_hole(
            &Configuration::identity_at(Vector3::zeros()),
            &Vector3::new(0.1, 2.0, 2.0),
            &Vector2::new(0.0, 0.0),
            &Vector2::new(0.5, 0.25),
            tilt,
        )
        .unwrap();
        let robot = RobotBody::new(Vector3::new(0.2, 0.2, 0.06));
        let q = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), tilt);
        let dir = q * Vector3::x_axis().into_inner();
        let a = Configuration::new(-dir * 1.0, q);
        let b = Configuration::new(dir * 1.0, q);
        let coarse = edge_is_free(&a, &b, &scene, &robot, 0.01);
        let fine = edge_is_free(&a, &b, &scene, &robot, 0.001);
        assert!(coarse);
        assert_eq!(coarse, fine);
    }

    #[test]
    fn margin_empty_scene_is_infinite() {
        let scene = empty_scene();
        let c = Configuration::identity_at(Vector3::zeros());
        assert_eq!(margin(&c, &scene, &small_robot()), f64::INFINITY);
    }

    #[test]
    fn margin_matches_face_distance_for_tiny_robot() {
        let mut scene = empty_scene();
        scene.obstacles.push(Obstacle::axis_aligned(
            Vector3::new(2.0, 0.0, 0.0),
            Vector3::new(0.5, 0.5, 0.5),
        ));
        let robot = RobotBody::new(Vector3::new(1e-9, 1e-9, 1e-9));
        let c = Configuration::identity_at(Vector3::new(0.5, 0.0, 0.0));
        assert_relative_eq!(margin(&c, &scene, &robot), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn margin_in_hole_matches_sampling_oracle() {
        let mut scene = empty_scene();
        scene.obstacles = wall_with_hole(
            &Configuration::identity_at(Vector3::zeros()),
            &Vector3::new(0.1, 2.0, 2.0),
            &Vector2::new(0.0, 0.0),
            &Vector2::new(0.5, 0.25),
            0.0,
        )
        .unwrap();
        let robot = RobotBody::new(Vector3::new(0.2, 0.2, 0.06));
        let c = Configuration::identity_at(Vector3::zeros());
        let got = margin(&c, &scene, &robot);
        let want = oracle::margin_sampled(&c, &scene.obstacles, &robot, 0.01);
        assert!(got > 0.0);
        assert!((got - want).abs() <= 0.05 * want, "got {got}, oracle {want}");
    }

    #[test]
    fn margin_shrinking_robot_never_decreases() {
        let mut scene = empty_scene();
        scene.obstacles.push(Obstacle::axis_aligned(
            Vector3::new(1.5, 0.3, -0.2),
            Vector3::new(0.4, 0.6, 0.5),
        ));
        let c = Configuration::new(
            Vector3::new(0.2, -0.1, 0.3),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 0.7),
        );
        let big = RobotBody::new(Vector3::new(0.3, 0.3, 0.1));
        let small = RobotBody::new(Vector3::new(0.15, 0.2, 0.05));
        assert!(margin(&c, &scene, &small) >= margin(&c, &scene, &big));
    }

    /// SAT agrees with the brute-force surface-sampling oracle over random
    /// pose/box pairs: never a false "free", and disagreements only within the
    /// oracle's sampling resolution.
    #[test]
    fn sat_agrees_with_sampling_oracle_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let robot = RobotBody::new(Vector3::new(0.3, 0.25, 0.1));
        let spacing = 0.01;
        for _ in 0..1000 {
            let obstacle = Obstacle::new(
                Vector3::new(
                    rng.gen_range(-0.8..0.8),
                    rng.gen_range(-0.8..0.8),
                    rng.gen_range(-0.8..0.8),
                ),
                Vector3::new(
                    rng.gen_range(0.1..0.6),
                    rng.gen_range(0.1..0.6),
                    rng.gen_range(0.1..0.6),
                ),
                random_quat(&mut rng),
            );
            let pose = Configuration::new(
                Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ),
                random_quat(&mut rng),
            );
            let body = robot_obb(&pose, &robot);
            let sat_hit = obb_overlap(&body, &obstacle.as_obb());
            let oracle_hit = oracle::pose_collides_sampled(&pose, &[obstacle], &robot, spacing);
            if oracle_hit {
                assert!(sat_hit, "oracle found contact the SAT test missed");
            } else if sat_hit {
                // Near-touching pair: the SAT gap must be within the oracle's
                // sampling resolution.
                let gap = separation_gap(&body, &obstacle.as_obb());
                assert!(gap <= spacing, "SAT hit with gap {gap} beyond oracle resolution");
            }
        }
    }

    #[test]
    fn collision_invariant_under_rigid_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let robot = small_robot();
        for _ in 0..200 {
            let obstacle = Obstacle::new(
                Vector3::new(rng.gen_range(-1.0..1.0), 0.0, 0.0),
                Vector3::new(0.4, 0.4, 0.4),
                random_quat(&mut rng),
            );
            let pose = Configuration::new(
                Vector3::new(
                    rng.gen_range(-1.5..1.5),
                    rng.gen_range(-1.5..1.5),
                    rng.gen_range(-1.5..1.5),
                ),
                random_quat(&mut rng),
            );
            let t_rot = random_quat(&mut rng);
            let t_shift = Vector3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );

            let body = robot_obb(&pose, &robot);
            let before = obb_overlap(&body, &obstacle.as_obb());

            let moved_pose = Configuration::new(t_rot * pose.p + t_shift, t_rot * pose.r);
            let moved_obstacle = Obstacle::new(
                t_rot * obstacle.center + t_shift,
                obstacle.half_extents,
                t_rot * obstacle.orientation,
            );
            let after = obb_overlap(&robot_obb(&moved_pose, &robot), &moved_obstacle.as_obb());
            assert_eq!(before, after);
        }
    }

    #[test]
    fn margin_positive_iff_collision_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut scene = empty_scene();
        scene.obstacles.push(Obstacle::axis_aligned(
            Vector3::zeros(),
            Vector3::new(0.5, 0.5, 0.5),
        ));
        let robot = small_robot();
        for _ in 0..300 {
            let c = Configuration::new(
                Vector3::new(
                    rng.gen_range(-1.5..1.5),
                    rng.gen_range(-1.5..1.5),
                    rng.gen_range(-1.5..1.5),
                ),
                random_quat(&mut rng),
            );
            let hit = is_collision(&c, &scene, &robot);
            let m = margin(&c, &scene, &robot);
            if hit {
                assert_eq!(m, 0.0);
            } else {
                assert!(m > 0.0);
            }
        }
    }
}
