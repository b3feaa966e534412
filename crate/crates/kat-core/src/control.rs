//! Forward and time-inverse controllers that drive the vehicle toward
//! stillness, plus the near-holonomic membership test.
//!
//! Both controllers share one structure: thrust is the projection of a
//! desired force (gravity compensation plus a velocity term) onto the body
//! axis, and the moment combines rate damping, the gyroscopic term and an
//! attitude-error term toward the tilt that opposes the velocity error. The
//! backward controller flips the sign of every velocity- and rate-feedback
//! term while keeping the attitude stiffness, which makes the closed loop
//! contract when stepped in reverse time. Outputs are saturated per rotor.

use nalgebra::{Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{saturate, QuadParams, State, Wrench, E3};

/// Gains shared by the forward and backward controllers.
///
/// `k_omega` damps body rates, `k_z` is the attitude stiffness, `k_zv` maps
/// velocity error to commanded tilt, and `k_v` maps velocity error to thrust.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ControllerGains {
    pub k_omega: f64,
    pub k_zv: f64,
    pub k_z: f64,
    pub k_v: f64,
}

impl ControllerGains {
    pub fn new(k_omega: f64, k_zv: f64, k_z: f64, k_v: f64) -> Self {
        assert!(k_omega > 0.0 && k_zv > 0.0 && k_z > 0.0 && k_v > 0.0);
        Self {
            k_omega,
            k_zv,
            k_z,
            k_v,
        }
    }
}

/// Weights of the near-holonomic membership test
/// `w_omega ||omega|| + w_v ||v|| + w_r ||q - q0|| < epsilon`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct HolonomicWeights {
    pub w_v: f64,
    pub w_omega: f64,
    pub w_r: f64,
    pub epsilon: f64,
}

impl HolonomicWeights {
    pub fn new(w_v: f64, w_omega: f64, w_r: f64, epsilon: f64) -> Self {
        assert!(w_v > 0.0 && w_omega > 0.0 && w_r > 0.0 && epsilon > 0.0);
        Self {
            w_v,
            w_omega,
            w_r,
            epsilon,
        }
    }

    /// Same weights with a scaled threshold.
    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        Self { epsilon, ..*self }
    }
}

/// Weighted deviation from the still, level reference state.
pub fn holonomic_measure(s: &State, weights: &HolonomicWeights) -> f64 {
    let q = s.quaternion();
    let q0 = UnitQuaternion::identity();
    let dq = (q.into_inner() - q0.into_inner()).norm();
    weights.w_omega * s.omega.norm() + weights.w_v * s.v.norm() + weights.w_r * dq
}

pub fn is_near_holonomic(s: &State, weights: &HolonomicWeights) -> bool {
    holonomic_measure(s, weights) < weights.epsilon
}

/// Attitude whose body-up axis points along `up_target`, with no yaw twist.
fn desired_attitude(up_target: &Vector3<f64>) -> Rotation3<f64> {
    let up = Vector3::z();
    match UnitQuaternion::rotation_between(&up, up_target) {
        Some(q) => q.to_rotation_matrix(),
        // Antipodal target: any half-turn about a horizontal axis.
        None => Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI),
    }
}

/// Attitude error `1/2 (Rd^T R - R^T Rd)` expressed as a vector.
fn attitude_error(rot: &Rotation3<f64>, rot_des: &Rotation3<f64>) -> Vector3<f64> {
    let m = rot_des.transpose() * rot.matrix() - rot.transpose() * rot_des.matrix();
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)]) * 0.5
}

fn control(s: &State, params: &QuadParams, gains: &ControllerGains, backward: bool) -> Wrench {
    let sign = if backward { -1.0 } else { 1.0 };
    let e_v = s.v;
    let e_omega = s.omega;
    let mg = params.mass * params.gravity;

    // Desired force: hover compensation plus velocity damping (reversed for
    // the time-inverse controller so its reverse-time loop contracts).
    let force = -sign * gains.k_zv * e_v - mg * E3;
    let up_target = if force.norm() > 1e-9 * mg {
        force.normalize()
    } else {
        Vector3::z()
    };
    let rot_des = desired_attitude(&up_target);
    let e_rot = attitude_error(&s.rot, &rot_des);

    let moment = -sign * gains.k_omega * e_omega
        + sign * s.omega.cross(&(params.inertia * s.omega))
        - gains.k_z * e_rot;
    let thrust = (sign * gains.k_v * e_v + mg * E3).dot(&(s.rot * E3));

    saturate(&Wrench { thrust, moment }, params)
}

/// Raw (unsaturated) wrench, exposed for the algebraic identity checks.
pub fn control_unsaturated(
    s: &State,
    params: &QuadParams,
    gains: &ControllerGains,
    backward: bool,
) -> Wrench {
    let sign = if backward { -1.0 } else { 1.0 };
    let mg = params.mass * params.gravity;
    let force = -sign * gains.k_zv * s.v - mg * E3;
    let up_target = if force.norm() > 1e-9 * mg {
        force.normalize()
    } else {
        Vector3::z()
    };
    let e_rot = attitude_error(&s.rot, &desired_attitude(&up_target));
    Wrench {
        thrust: (sign * gains.k_v * s.v + mg * E3).dot(&(s.rot * E3)),
        moment: -sign * gains.k_omega * s.omega
            + sign * s.omega.cross(&(params.inertia * s.omega))
            - gains.k_z * e_rot,
    }
}

/// Feedback wrench driving the state toward stillness in forward time.
pub fn forward_control(s: &State, params: &QuadParams, gains: &ControllerGains) -> Wrench {
    control(s, params, gains, false)
}

/// Time-inverse companion of [`forward_control`]: same structure with the
/// velocity and rate feedback signs flipped.
pub fn backward_control(s: &State, params: &QuadParams, gains: &ControllerGains) -> Wrench {
    control(s, params, gains, true)
}
