//! Brute-force reference checks used by the validation suites.
//!
//! These deliberately avoid the production collision kernels: poses are
//! tested by sampling the robot box surface on a grid and evaluating obstacle
//! half-space tests point by point, so they can arbitrate the fast paths.

#![doc(hidden)]

use crate::world::{Configuration, Obstacle, RobotBody};
use nalgebra::Vector3;

/// Points on the surface of the robot box at pose `c`, at roughly `spacing`
/// meters apart, plus the 8 corners.
pub fn robot_surface_points(
    c: &Configuration,
    robot: &RobotBody,
    spacing: f64,
) -> Vec<Vector3<f64>> {
    let h = robot.half_extents;
    let mut pts = Vec::new();
    let steps = |len: f64| ((2.0 * len / spacing).ceil() as usize).max(1);
    let (nx, ny, nz) = (steps(h.x), steps(h.y), steps(h.z));
    let coord = |i: usize, n: usize, half: f64| -half + 2.0 * half * i as f64 / n as f64;
    for i in 0..=nx {
        for j in 0..=ny {
            for k in 0..=nz {
                let on_face = i == 0 || i == nx || j == 0 || j == ny || k == 0 || k == nz;
                if !on_face {
                    continue;
                }
                let local = Vector3::new(coord(i, nx, h.x), coord(j, ny, h.y), coord(k, nz, h.z));
                pts.push(c.p + c.r * local);
            }
        }
    }
    pts
}

/// Half-space membership: is the point inside the obstacle box (surface
/// included)?
pub fn point_in_obstacle(p: &Vector3<f64>, o: &Obstacle) -> bool {
    let local = o.orientation.inverse() * (p - o.center);
    local.x.abs() <= o.half_extents.x
        && local.y.abs() <= o.half_extents.y
        && local.z.abs() <= o.half_extents.z
}

fn point_in_robot(p: &Vector3<f64>, c: &Configuration, robot: &RobotBody) -> bool {
    let local = c.r.inverse() * (p - c.p);
    local.x.abs() <= robot.half_extents.x
        && local.y.abs() <= robot.half_extents.y
        && local.z.abs() <= robot.half_extents.z
}

fn obstacle_corners(o: &Obstacle) -> [Vector3<f64>; 8] {
    let h = o.half_extents;
    let mut out = [Vector3::zeros(); 8];
    for (idx, signs) in [
        (-1.0, -1.0, -1.0),
        (-1.0, -1.0, 1.0),
        (-1.0, 1.0, -1.0),
        (-1.0, 1.0, 1.0),
        (1.0, -1.0, -1.0),
        (1.0, -1.0, 1.0),
        (1.0, 1.0, -1.0),
        (1.0, 1.0, 1.0),
    ]
    .iter()
    .enumerate()
    {
        let local = Vector3::new(signs.0 * h.x, signs.1 * h.y, signs.2 * h.z);
        out[idx] = o.center + o.orientation * local;
    }
    out
}

/// Sampled collision verdict: any surface sample inside an obstacle, or any
/// obstacle corner inside the robot (which catches full containment).
pub fn pose_collides_sampled(
    c: &Configuration,
    obstacles: &[Obstacle],
    robot: &RobotBody,
    spacing: f64,
) -> bool {
    let surface = robot_surface_points(c, robot, spacing);
    for o in obstacles {
        if surface.iter().any(|p| point_in_obstacle(p, o)) {
            return true;
        }
        if obstacle_corners(o).iter().any(|p| point_in_robot(p, c, robot)) {
            return true;
        }
        if point_in_obstacle(&c.p, o) {
            return true;
        }
    }
    false
}

fn point_obstacle_distance(p: &Vector3<f64>, o: &Obstacle) -> f64 {
    let local = o.orientation.inverse() * (p - o.center);
    let d = Vector3::new(
        (local.x.abs() - o.half_extents.x).max(0.0),
        (local.y.abs() - o.half_extents.y).max(0.0),
        (local.z.abs() - o.half_extents.z).max(0.0),
    );
    d.norm()
}

/// Clearance estimate: minimum over robot surface samples of the distance to
/// any obstacle box. Converges to the true clearance as `spacing -> 0`.
pub fn margin_sampled(
    c: &Configuration,
    obstacles: &[Obstacle],
    robot: &RobotBody,
    spacing: f64,
) -> f64 {
    if pose_collides_sampled(c, obstacles, robot, spacing) {
        return 0.0;
    }
    let surface = robot_surface_points(c, robot, spacing);
    let mut best = f64::INFINITY;
    for o in obstacles {
        for p in &surface {
            let d = point_obstacle_distance(p, o);
            if d < best {
                best = d;
            }
        }
    }
    best
}
