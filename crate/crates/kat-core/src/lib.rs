//! Kinodynamic aggressive-trajectory planning for quadcopters.
//!
//! The pipeline plans a holonomic path with a whitelist-augmented RRT,
//! locates the narrow points along it, refines each into a maximum-clearance
//! configuration with an escape direction, rolls the closed-loop dynamics
//! forward and backward through each passage, and stitches the pieces with
//! low-speed connectors through near-holonomic states.

pub mod config;
pub mod control;
pub mod dynamics;
pub mod escape;
pub mod narrow;
pub mod oracle;
pub mod planner;
pub mod rrt;
pub mod scenes;
pub mod world;

pub use config::{SceneFile, SceneParams};
pub use control::{ControllerGains, HolonomicWeights};
pub use dynamics::{QuadParams, RotorThrusts, State, Wrench};
pub use planner::{GlobalPlan, LocalPassage, PlanReport, StateTrajectory};
pub use rrt::HolonomicPath;
pub use world::{Configuration, Obstacle, RobotBody, Scene};
