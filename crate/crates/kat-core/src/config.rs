//! Scene files and parameter resolution.
//!
//! A scene file is a YAML document with the workspace bounds, the robot
//! geometry, walls (optionally carrying a tilted rectangular opening), start
//! and goal poses, and the parameter sections for the vehicle, controllers
//! and planner stages. Angles are degrees in files and radians internally.

use nalgebra::{Matrix3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{ControllerGains, HolonomicWeights};
use crate::dynamics::QuadParams;
use crate::narrow::MarginObjective;
use crate::rrt::RrtParams;
use crate::world::{
    is_collision, wall_with_hole, Bounds, Configuration, GoalTolerance, Obstacle, RobotBody,
    Scene, WorldError,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read scene file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed scene file {path}: {source}")]
    Parse {
        path: String,
        source: serde_yaml::Error,
    },
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error(transparent)]
    World(#[from] WorldError),
}

fn d2r(deg: f64) -> f64 {
    deg.to_radians()
}

fn rpy_quat(rpy_deg: &[f64; 3]) -> UnitQuaternion<f64> {
    UnitQuaternion::from_euler_angles(d2r(rpy_deg[0]), d2r(rpy_deg[1]), d2r(rpy_deg[2]))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PoseSpec {
    pub position: [f64; 3],
    #[serde(default)]
    pub rpy_deg: [f64; 3],
}

impl PoseSpec {
    pub fn to_configuration(&self) -> Configuration {
        Configuration::new(Vector3::from(self.position), rpy_quat(&self.rpy_deg))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HoleSpec {
    /// Opening center in the wall plane, (horizontal, vertical) meters.
    pub center: [f64; 2],
    pub half_extents: [f64; 2],
    #[serde(default)]
    pub tilt_deg: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WallSpec {
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
    #[serde(default)]
    pub rpy_deg: [f64; 3],
    #[serde(default)]
    pub hole: Option<HoleSpec>,
}

impl WallSpec {
    pub fn to_obstacles(&self) -> Result<Vec<Obstacle>, WorldError> {
        let pose = Configuration::new(Vector3::from(self.center), rpy_quat(&self.rpy_deg));
        match &self.hole {
            None => Ok(vec![Obstacle::new(
                pose.p,
                Vector3::from(self.half_extents),
                pose.r,
            )]),
            Some(h) => wall_with_hole(
                &pose,
                &Vector3::from(self.half_extents),
                &Vector2::from(h.center),
                &Vector2::from(h.half_extents),
                d2r(h.tilt_deg),
            ),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundsSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RobotSpec {
    pub half_extents: [f64; 3],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GoalToleranceSpec {
    pub position_m: f64,
    pub angle_deg: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuadSpec {
    pub mass: f64,
    pub inertia_diag: [f64; 3],
    pub arm: f64,
    pub drag: f64,
    pub gravity: f64,
    pub rotor_max: f64,
}

impl Default for QuadSpec {
    fn default() -> Self {
        Self {
            mass: 1.0,
            inertia_diag: [0.01, 0.01, 0.018],
            arm: 0.2,
            drag: 0.05,
            gravity: 9.81,
            rotor_max: 20.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GainsSpec {
    pub k_omega: f64,
    pub k_zv: f64,
    pub k_z: f64,
    pub k_v: f64,
}

impl Default for GainsSpec {
    fn default() -> Self {
        Self {
            k_omega: 0.3,
            k_zv: 2.2,
            k_z: 2.0,
            k_v: 6.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HolonomicSpec {
    pub w_v: f64,
    pub w_omega: f64,
    pub w_r: f64,
    pub epsilon: f64,
}

impl Default for HolonomicSpec {
    fn default() -> Self {
        Self {
            w_v: 1.0,
            w_omega: 0.3,
            w_r: 1.0,
            epsilon: 0.15,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RrtSpec {
    pub p_goal: Option<f64>,
    pub extend_step: Option<f64>,
    pub rot_weight: Option<f64>,
    pub resolution: Option<f64>,
    pub max_iterations: Option<usize>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct NarrowSpec {
    /// Resampling and probe spacing, meters.
    pub h: Option<f64>,
    pub link_radius: Option<f64>,
    /// Perpendicular-plane sampling disk radius, meters.
    pub rho: Option<f64>,
    pub samples: Option<usize>,
    pub theta_max_deg: Option<f64>,
    pub delta: Option<f64>,
    /// "clearance" (default) or "summed_squared".
    pub objective: Option<String>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EscapeSpec {
    pub samples: Option<usize>,
    pub mu: Option<f64>,
    pub sigma: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct PlannerSpec {
    pub dt: Option<f64>,
    pub t_max: Option<f64>,
    pub v_step: Option<f64>,
    pub v_max: Option<f64>,
    pub smooth_iterations: Option<usize>,
    pub retries: Option<usize>,
    pub rollout_epsilon_factor: Option<f64>,
    pub connector_accel: Option<f64>,
    pub min_escape_separation: Option<f64>,
}

/// On-disk scene document.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneFile {
    pub bounds: BoundsSpec,
    pub robot: RobotSpec,
    pub start: PoseSpec,
    pub goal: PoseSpec,
    pub goal_tolerance: GoalToleranceSpec,
    #[serde(default)]
    pub walls: Vec<WallSpec>,
    #[serde(default)]
    pub quad: QuadSpec,
    #[serde(default)]
    pub gains: GainsSpec,
    #[serde(default)]
    pub holonomic: HolonomicSpec,
    #[serde(default)]
    pub rrt: RrtSpec,
    #[serde(default)]
    pub narrow: NarrowSpec,
    #[serde(default)]
    pub escape: EscapeSpec,
    #[serde(default)]
    pub planner: PlannerSpec,
}

/// Resolved narrow-stage parameters.
#[derive(Clone, Copy, Debug)]
pub struct NarrowParams {
    pub h: f64,
    pub link_radius: f64,
    pub rho: f64,
    pub samples: usize,
    pub theta_max: f64,
    pub delta: f64,
    pub objective: MarginObjective,
}

/// Resolved escape-stage parameters.
#[derive(Clone, Copy, Debug)]
pub struct EscapeParams {
    pub samples: usize,
    pub mu: f64,
    pub sigma: f64,
}

/// Resolved local-planning parameters.
#[derive(Clone, Copy, Debug)]
pub struct DriveParams {
    pub dt: f64,
    pub t_max: f64,
    pub v_step: f64,
    pub v_max: f64,
    pub smooth_iterations: usize,
    pub retries: usize,
    /// Rollouts target this fraction of epsilon so connectors stay strictly
    /// inside the near-holonomic set after the low-speed term is added.
    pub rollout_epsilon_factor: f64,
    pub connector_accel: f64,
    /// Both rollout endpoints must clear the narrow plane by at least this
    /// distance along the escape direction.
    pub min_escape_separation: f64,
}

/// Every resolved parameter the pipeline needs.
#[derive(Clone, Debug)]
pub struct SceneParams {
    pub quad: QuadParams,
    pub gains: ControllerGains,
    pub weights: HolonomicWeights,
    pub rrt: RrtParams,
    pub narrow: NarrowParams,
    pub escape: EscapeParams,
    pub drive: DriveParams,
}

impl SceneFile {
    pub fn from_path(path: &str) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_string(),
            source,
        })?;
        serde_yaml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_string(),
            source,
        })
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("scene serialization cannot fail")
    }

    /// Builds the runtime scene and resolved parameters, validating the
    /// start/goal preconditions.
    pub fn lower(&self) -> Result<(Scene, RobotBody, SceneParams), ConfigError> {
        let robot = RobotBody::new(Vector3::from(self.robot.half_extents));
        let mut obstacles = Vec::new();
        for w in &self.walls {
            obstacles.extend(w.to_obstacles()?);
        }
        let scene = Scene {
            bounds: Bounds::new(Vector3::from(self.bounds.min), Vector3::from(self.bounds.max)),
            obstacles,
            start: self.start.to_configuration(),
            goal: self.goal.to_configuration(),
            goal_tolerance: GoalTolerance {
                position: self.goal_tolerance.position_m,
                angle: d2r(self.goal_tolerance.angle_deg),
            },
        };
        if is_collision(&scene.start, &scene, &robot) {
            return Err(ConfigError::Invalid(
                "start configuration is in collision".into(),
            ));
        }
        if is_collision(&scene.goal, &scene, &robot) {
            return Err(ConfigError::Invalid(
                "goal configuration is in collision".into(),
            ));
        }

        let params = self.resolve_params(&robot)?;
        Ok((scene, robot, params))
    }

    fn resolve_params(&self, robot: &RobotBody) -> Result<SceneParams, ConfigError> {
        let q = &self.quad;
        let quad = QuadParams::new(
            q.mass,
            Matrix3::from_diagonal(&Vector3::from(q.inertia_diag)),
            q.arm,
            q.drag,
            q.gravity,
            q.rotor_max,
        );
        let gains = ControllerGains::new(
            self.gains.k_omega,
            self.gains.k_zv,
            self.gains.k_z,
            self.gains.k_v,
        );
        let weights = HolonomicWeights::new(
            self.holonomic.w_v,
            self.holonomic.w_omega,
            self.holonomic.w_r,
            self.holonomic.epsilon,
        );
        let rrt_defaults = RrtParams::defaults_for(robot);
        let rrt = RrtParams {
            p_goal: self.rrt.p_goal.unwrap_or(rrt_defaults.p_goal),
            extend_step: self.rrt.extend_step.unwrap_or(rrt_defaults.extend_step),
            rot_weight: self.rrt.rot_weight.unwrap_or(rrt_defaults.rot_weight),
            resolution: self.rrt.resolution.unwrap_or(rrt_defaults.resolution),
            max_iterations: self
                .rrt
                .max_iterations
                .unwrap_or(rrt_defaults.max_iterations),
            orientation: rrt_defaults.orientation,
        };
        let objective = match self.narrow.objective.as_deref() {
            None | Some("clearance") => MarginObjective::Clearance,
            Some("summed_squared") => MarginObjective::SummedSquaredDistance,
            Some(other) => {
                return Err(ConfigError::Invalid(format!(
                    "unknown narrow.objective {other:?} (expected \"clearance\" or \"summed_squared\")"
                )))
            }
        };
        let narrow = NarrowParams {
            h: self.narrow.h.unwrap_or(0.3),
            link_radius: self.narrow.link_radius.unwrap_or(0.5),
            rho: self.narrow.rho.unwrap_or(0.5),
            samples: self.narrow.samples.unwrap_or(256),
            theta_max: d2r(self.narrow.theta_max_deg.unwrap_or(15.0)),
            delta: self
                .narrow
                .delta
                .unwrap_or(4.0 * robot.circumscribed_radius()),
            objective,
        };
        let mu = self
            .escape
            .mu
            .unwrap_or(0.2 + 2.0 * robot.circumscribed_radius());
        let escape = EscapeParams {
            samples: self.escape.samples.unwrap_or(256),
            mu,
            sigma: self.escape.sigma.unwrap_or(mu / 3.0),
        };
        let drive = DriveParams {
            dt: self.planner.dt.unwrap_or(1e-3),
            t_max: self.planner.t_max.unwrap_or(5.0),
            v_step: self.planner.v_step.unwrap_or(0.5),
            v_max: self.planner.v_max.unwrap_or(20.0),
            smooth_iterations: self.planner.smooth_iterations.unwrap_or(200),
            retries: self.planner.retries.unwrap_or(3),
            rollout_epsilon_factor: self.planner.rollout_epsilon_factor.unwrap_or(0.45),
            connector_accel: self.planner.connector_accel.unwrap_or(0.15),
            min_escape_separation: self.planner.min_escape_separation.unwrap_or(0.5),
        };
        if drive.dt <= 0.0 || drive.dt > 0.01 {
            return Err(ConfigError::Invalid(format!(
                "planner.dt must be in (0, 0.01], got {}",
                drive.dt
            )));
        }
        Ok(SceneParams {
            quad,
            gains,
            weights,
            rrt,
            narrow,
            escape,
            drive,
        })
    }

    /// Structural lint beyond what [`Self::lower`] enforces; returns
    /// human-readable findings.
    pub fn lint(&self) -> Vec<String> {
        let mut findings = Vec::new();
        match self.lower() {
            Err(e) => findings.push(e.to_string()),
            Ok((scene, robot, params)) => {
                for (i, o) in scene.obstacles.iter().enumerate() {
                    let inside = crate::world::Bounds {
                        min: scene.bounds.min,
                        max: scene.bounds.max,
                    };
                    let center_ok = inside.contains_point(&o.center);
                    if !center_ok {
                        findings.push(format!("obstacle {i} center lies outside the bounds"));
                    }
                }
                let start_state = crate::dynamics::State::at_rest(&scene.start);
                if !crate::control::is_near_holonomic(&start_state, &params.weights) {
                    findings.push("start pose is not near-holonomic at rest".into());
                }
                let goal_state = crate::dynamics::State::at_rest(&scene.goal);
                if !crate::control::is_near_holonomic(&goal_state, &params.weights) {
                    findings.push("goal pose is not near-holonomic at rest".into());
                }
                let r = robot.circumscribed_radius();
                if params.narrow.h < 1e-3 || params.narrow.h > 10.0 * r {
                    findings.push(format!(
                        "narrow.h = {} is far from the robot scale {r}",
                        params.narrow.h
                    ));
                }
            }
        }
        findings
    }
}
