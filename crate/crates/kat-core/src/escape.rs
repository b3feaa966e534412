//! Escape-direction estimation for a narrow configuration: filtered,
//! length-weighted spherical direction sampling.

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::world::{is_collision, Configuration, RobotBody, Scene};

/// Estimated direction for leaving a narrow passage, with the number of
/// direction samples that survived filtering.
#[derive(Clone, Copy, Debug)]
pub struct EscapeDirection {
    pub dir: Vector3<f64>,
    pub support: usize,
}

#[derive(Debug, Error)]
pub enum EscapeError {
    #[error("all direction samples were filtered out (passage blocked)")]
    AllSamplesDiscarded,
    #[error("surviving directions cancel out (degenerate weighted sum)")]
    DegenerateSum,
}

fn sample_unit_sphere(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Positive draw from N(mu, sigma): lengths are translation magnitudes, so
/// non-positive draws are rejected.
fn sample_positive_length(rng: &mut ChaCha8Rng, mu: f64, sigma: f64) -> f64 {
    loop {
        let t: f64 = mu + sigma * rng.sample::<f64, _>(StandardNormal);
        if t > 0.0 {
            return t;
        }
    }
}

/// Estimates the escape direction at `c_nar`:
/// sample `n` directions uniformly on the sphere, drop those not aligned with
/// the path tangent `d_nar`, translate the configuration by a random positive
/// length along each survivor and drop it if the translated pose collides,
/// then return the normalized length-weighted mean of the survivors.
#[allow(clippy::too_many_arguments)]
pub fn escape_direction(
    c_nar: &Configuration,
    d_nar: &Vector3<f64>,
    scene: &Scene,
    robot: &RobotBody,
    n: usize,
    mu: f64,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<EscapeDirection, EscapeError> {
    assert!(n >= 8, "too few direction samples");
    assert!(mu > 0.0);
    let mut weighted = Vector3::zeros();
    let mut support = 0usize;
    for _ in 0..n {
        let d = sample_unit_sphere(rng);
        if d.dot(d_nar) <= 0.0 {
            continue;
        }
        let t = sample_positive_length(rng, mu, sigma);
        let probe = Configuration::new(c_nar.p + t * d, c_nar.r);
        if is_collision(&probe, scene, robot) {
            continue;
        }
        weighted += d * t;
        support += 1;
    }
    if support == 0 {
        return Err(EscapeError::AllSamplesDiscarded);
    }
    let norm = weighted.norm();
    if norm < 1e-12 {
        return Err(EscapeError::DegenerateSum);
    }
    Ok(EscapeDirection {
        dir: weighted / norm,
        support,
    })
}
