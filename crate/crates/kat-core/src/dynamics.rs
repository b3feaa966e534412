//! Quadcopter rigid-body dynamics, rotor mixing and fixed-step integration.
//!
//! The world frame has z up; `E3` is the downward unit gravity direction and
//! the rotors thrust along the body +z axis (`-R * E3` in world coordinates).
//! Attitude is integrated on the rotation group with the exponential map, and
//! the backward step is the exact fixed-point inverse of the forward step so
//! that backward-planned segments replay forward bit-for-bit.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{canonical_hemisphere, Configuration};

/// Downward unit vector of the world frame.
pub const E3: Vector3<f64> = Vector3::new(0.0, 0.0, -1.0);

/// Full rigid-body state: position, body-to-world rotation, inertial-frame
/// velocity and body-frame angular velocity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct State {
    pub p: Vector3<f64>,
    pub rot: Rotation3<f64>,
    pub v: Vector3<f64>,
    pub omega: Vector3<f64>,
}

impl State {
    /// A resting state at the given pose.
    pub fn at_rest(c: &Configuration) -> Self {
        Self {
            p: c.p,
            rot: c.r.to_rotation_matrix(),
            v: Vector3::zeros(),
            omega: Vector3::zeros(),
        }
    }

    pub fn configuration(&self) -> Configuration {
        Configuration::new(self.p, self.quaternion())
    }

    /// Orientation as a canonical-hemisphere unit quaternion.
    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        let q = UnitQuaternion::from_rotation_matrix(&self.rot);
        canonical_hemisphere(UnitQuaternion::new_normalize(q.into_inner()))
    }
}

/// Physical parameters of the vehicle.
#[derive(Clone, Copy, Debug)]
pub struct QuadParams {
    /// Mass, kg.
    pub mass: f64,
    /// Body-frame inertia matrix, kg m^2.
    pub inertia: Matrix3<f64>,
    /// Rotor arm length, m.
    pub arm: f64,
    /// Rotor drag torque per unit thrust, N m / N.
    pub drag: f64,
    /// Gravitational acceleration, m/s^2.
    pub gravity: f64,
    /// Per-rotor thrust ceiling, N.
    pub rotor_max: f64,
}

impl QuadParams {
    pub fn new(
        mass: f64,
        inertia: Matrix3<f64>,
        arm: f64,
        drag: f64,
        gravity: f64,
        rotor_max: f64,
    ) -> Self {
        assert!(mass > 0.0 && arm > 0.0 && drag > 0.0 && gravity > 0.0 && rotor_max > 0.0);
        let sym = (inertia - inertia.transpose()).norm();
        assert!(sym < 1e-9, "inertia matrix must be symmetric");
        assert!(
            inertia.symmetric_eigenvalues().iter().all(|e| *e > 0.0),
            "inertia matrix must be positive-definite"
        );
        Self {
            mass,
            inertia,
            arm,
            drag,
            gravity,
            rotor_max,
        }
    }

    pub fn inertia_inv(&self) -> Matrix3<f64> {
        self.inertia.try_inverse().expect("SPD inertia is invertible")
    }

    /// Wrench that holds a level hover.
    pub fn hover_wrench(&self) -> Wrench {
        Wrench {
            thrust: self.mass * self.gravity,
            moment: Vector3::zeros(),
        }
    }
}

/// Control input: total thrust along the body axis plus a body moment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wrench {
    pub thrust: f64,
    pub moment: Vector3<f64>,
}

/// Per-rotor thrusts, N.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotorThrusts(pub [f64; 4]);

/// Time derivative of a state under a given wrench.
#[derive(Clone, Copy, Debug)]
pub struct StateDerivative {
    pub dp: Vector3<f64>,
    /// Body angular velocity driving `rot' = rot * hat(omega)`.
    pub omega: Vector3<f64>,
    pub dv: Vector3<f64>,
    pub domega: Vector3<f64>,
}

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("backward step failed to converge within {0} iterations (dt too large)")]
    BackwardNonConvergence(usize),
}

pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Rigid-body equations of motion:
/// `p' = v`, `m v' = m g e3 - f R e3`, `R' = R hat(omega)`,
/// `J omega' = M - omega x J omega`.
pub fn derivative(s: &State, w: &Wrench, params: &QuadParams) -> StateDerivative {
    let accel = params.gravity * E3 - (w.thrust / params.mass) * (s.rot * E3);
    let domega =
        params.inertia_inv() * (w.moment - s.omega.cross(&(params.inertia * s.omega)));
    StateDerivative {
        dp: s.v,
        omega: s.omega,
        dv: accel,
        domega,
    }
}

/// One Gram-Schmidt pass over the columns; kills the multiplicative drift of
/// repeated rotation products.
fn renormalize(rot: Rotation3<f64>) -> Rotation3<f64> {
    let m = rot.into_inner();
    let c0: Vector3<f64> = m.column(0).normalize();
    let m1: Vector3<f64> = m.column(1).into();
    let c2 = c0.cross(&m1).normalize();
    let c1 = c2.cross(&c0);
    Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[c0, c1, c2]))
}

/// Explicit Euler step on the flat components and exponential-map step on the
/// rotation. `dt` must be in (0, 0.01].
pub fn step_forward(s: &State, w: &Wrench, dt: f64, params: &QuadParams) -> State {
    debug_assert!(dt > 0.0 && dt <= 0.01, "dt out of range");
    let d = derivative(s, w, params);
    State {
        p: s.p + d.dp * dt,
        rot: renormalize(s.rot * Rotation3::from_scaled_axis(s.omega * dt)),
        v: s.v + d.dv * dt,
        omega: s.omega + d.domega * dt,
    }
}

/// Exact inverse of [`step_forward`]: returns the state whose forward step
/// under the same wrench reproduces `s`. The angular-rate update is the only
/// implicit part and is solved by fixed-point iteration.
pub fn step_backward(
    s: &State,
    w: &Wrench,
    dt: f64,
    params: &QuadParams,
) -> Result<State, DynamicsError> {
    debug_assert!(dt > 0.0 && dt <= 0.01, "dt out of range");
    const MAX_ITERS: usize = 50;
    let j = params.inertia;
    let j_inv = params.inertia_inv();

    // omega_prev satisfies omega = omega_prev + dt J^-1 (M - omega_prev x J omega_prev).
    let mut omega_prev = s.omega;
    let mut converged = false;
    for _ in 0..MAX_ITERS {
        let next = s.omega - dt * (j_inv * (w.moment - omega_prev.cross(&(j * omega_prev))));
        if (next - omega_prev).norm() < 1e-15 {
            omega_prev = next;
            converged = true;
            break;
        }
        omega_prev = next;
    }
    if !converged {
        return Err(DynamicsError::BackwardNonConvergence(MAX_ITERS));
    }

    let rot_prev = renormalize(s.rot * Rotation3::from_scaled_axis(-omega_prev * dt));
    let accel_prev = params.gravity * E3 - (w.thrust / params.mass) * (rot_prev * E3);
    let v_prev = s.v - accel_prev * dt;
    Ok(State {
        p: s.p - v_prev * dt,
        rot: rot_prev,
        v: v_prev,
        omega: omega_prev,
    })
}

/// Rotor thrusts to total thrust and body moment:
/// `f = f1+f2+f3+f4`, `M1 = d (f4-f2)`, `M2 = d (f1-f3)`,
/// `M3 = c (-f1+f2-f3+f4)`.
pub fn mix(t: &RotorThrusts, params: &QuadParams) -> Wrench {
    let [f1, f2, f3, f4] = t.0;
    Wrench {
        thrust: f1 + f2 + f3 + f4,
        moment: Vector3::new(
            params.arm * (f4 - f2),
            params.arm * (f1 - f3),
            params.drag * (-f1 + f2 - f3 + f4),
        ),
    }
}

/// Exact inverse of [`mix`]. The boolean is false when any rotor thrust falls
/// outside `[0, rotor_max]`, in which case the caller decides how to saturate.
pub fn unmix(w: &Wrench, params: &QuadParams) -> (RotorThrusts, bool) {
    let f4 = w.thrust / 4.0;
    let m1 = w.moment.x / (2.0 * params.arm);
    let m2 = w.moment.y / (2.0 * params.arm);
    let m3 = w.moment.z / (4.0 * params.drag);
    let thrusts = [f4 + m2 - m3, f4 - m1 + m3, f4 - m2 - m3, f4 + m1 + m3];
    // Tolerate round-trip rounding at the interval ends.
    let tol = 1e-9;
    let feasible = thrusts
        .iter()
        .all(|f| *f >= -tol && *f <= params.rotor_max + tol);
    (RotorThrusts(thrusts), feasible)
}

/// Clamps a wrench to what the rotors can produce: unmix, clamp each rotor to
/// `[0, rotor_max]`, re-mix.
pub fn saturate(w: &Wrench, params: &QuadParams) -> Wrench {
    let (rotors, feasible) = unmix(w, params);
    if feasible {
        return *w;
    }
    let clamped = RotorThrusts(rotors.0.map(|f| f.clamp(0.0, params.rotor_max)));
    mix(&clamped, params)
}
