//! Built-in benchmark scenes: rooms split by one or two walls that carry a
//! tilted rectangular opening.
//!
//! Each wall assembly is a slab with a picture-frame opening, rotated about
//! the opening center, plus two axis-aligned filler blocks sealing the gap
//! between the swung slab edges and the floor and ceiling. The slab thickness
//! grows as `1 / cos(tilt)`, which reproduces the geometry of a tilted
//! aperture cut through a fixed-thickness upright wall: the passage is a duct
//! whose length grows with the opening angle, so steeper openings demand
//! faster traversals.

use crate::config::{
    BoundsSpec, EscapeSpec, GainsSpec, GoalToleranceSpec, HoleSpec, HolonomicSpec, NarrowSpec,
    PlannerSpec, PoseSpec, QuadSpec, RobotSpec, RrtSpec, SceneFile, WallSpec,
};

/// Room layout variants used by the benchmark harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SceneKind {
    SingleWall,
    DualWall,
}

impl SceneKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "single" | "single_wall" => Some(Self::SingleWall),
            "dual" | "dual_wall" => Some(Self::DualWall),
            _ => None,
        }
    }
}

struct Layout {
    x_half: f64,
    y_half: f64,
    z_top: f64,
    hole_z: f64,
    wall_xs: Vec<f64>,
    start_x: f64,
    goal_x: f64,
}

fn layout(kind: SceneKind) -> Layout {
    match kind {
        SceneKind::SingleWall => Layout {
            x_half: 2.8,
            y_half: 1.2,
            z_top: 4.4,
            hole_z: 2.6,
            wall_xs: vec![0.0],
            start_x: -2.2,
            goal_x: 2.2,
        },
        SceneKind::DualWall => Layout {
            x_half: 4.2,
            y_half: 1.2,
            z_top: 4.4,
            hole_z: 2.6,
            wall_xs: vec![-1.6, 1.6],
            start_x: -3.5,
            goal_x: 3.5,
        },
    }
}

/// Upright-wall half thickness; the duct length scales it by 1/cos(tilt).
const BASE_THICK: f64 = 0.1;
const SLAB_HALF_HEIGHT: f64 = 0.7;
const HOLE_HALF_Y: f64 = 0.5;
const HOLE_HALF_Z: f64 = 0.24;
const FILLER_OVERLAP: f64 = 0.05;

/// Half thickness of the slab along the passage axis at a given opening.
fn duct_half_length(opening_deg: f64) -> f64 {
    BASE_THICK / opening_deg.to_radians().cos().max(0.25)
}

/// One wall assembly: the tilted slab with its opening plus the two edge
/// fillers that close the room above and below the swung slab edges.
fn wall_assembly(wx: f64, hole_z: f64, y_half: f64, z_top: f64, opening_deg: f64) -> Vec<WallSpec> {
    let theta = opening_deg.to_radians();
    let (s, c) = theta.sin_cos();
    let hv = SLAB_HALF_HEIGHT;
    let t = duct_half_length(opening_deg);

    let slab = WallSpec {
        center: [wx, 0.0, hole_z],
        half_extents: [t, y_half, hv],
        rpy_deg: [0.0, 0.0, 0.0],
        hole: Some(HoleSpec {
            center: [0.0, 0.0],
            half_extents: [HOLE_HALF_Y, HOLE_HALF_Z],
            tilt_deg: opening_deg,
        }),
    };

    // Raised edge of the slab leans toward +x, lowered edge toward -x. Each
    // filler covers the full swung edge band plus an engagement overlap.
    let filler_half_x = t * c + FILLER_OVERLAP;
    let top_lo = hole_z + hv * c - t * s - FILLER_OVERLAP;
    let top = WallSpec {
        center: [wx + hv * s, 0.0, (top_lo + z_top) * 0.5],
        half_extents: [filler_half_x, y_half, (z_top - top_lo) * 0.5],
        rpy_deg: [0.0, 0.0, 0.0],
        hole: None,
    };
    let bot_hi = hole_z - hv * c + t * s + FILLER_OVERLAP;
    let bottom = WallSpec {
        center: [wx - hv * s, 0.0, bot_hi * 0.5],
        half_extents: [filler_half_x, y_half, bot_hi * 0.5],
        rpy_deg: [0.0, 0.0, 0.0],
        hole: None,
    };
    vec![slab, top, bottom]
}

/// Builds a complete scene document for the given layout and opening angle.
pub fn build_scene(kind: SceneKind, opening_deg: f64) -> SceneFile {
    let l = layout(kind);
    let mut walls = Vec::new();
    for wx in &l.wall_xs {
        walls.extend(wall_assembly(*wx, l.hole_z, l.y_half, l.z_top, opening_deg));
    }
    let rho = (HOLE_HALF_Y * HOLE_HALF_Y + HOLE_HALF_Z * HOLE_HALF_Z).sqrt();
    let duct = duct_half_length(opening_deg);
    SceneFile {
        bounds: BoundsSpec {
            min: [-l.x_half, -l.y_half, 0.0],
            max: [l.x_half, l.y_half, l.z_top],
        },
        robot: RobotSpec {
            half_extents: [0.25, 0.25, 0.08],
        },
        start: PoseSpec {
            position: [l.start_x, 0.0, 1.6],
            rpy_deg: [0.0; 3],
        },
        goal: PoseSpec {
            position: [l.goal_x, 0.0, 1.6],
            rpy_deg: [0.0; 3],
        },
        goal_tolerance: GoalToleranceSpec {
            position_m: 0.3,
            angle_deg: 30.0,
        },
        walls,
        quad: QuadSpec::default(),
        gains: GainsSpec::default(),
        holonomic: HolonomicSpec::default(),
        rrt: RrtSpec::default(),
        narrow: NarrowSpec {
            h: Some(0.3),
            // One cluster per duct, however long the duct is.
            link_radius: Some(2.0 * duct + 0.3),
            rho: Some(rho),
            samples: Some(512),
            theta_max_deg: Some(20.0),
            delta: Some(1.5),
            objective: None,
        },
        escape: EscapeSpec {
            samples: Some(4096),
            mu: Some(0.6),
            sigma: Some(0.2),
        },
        planner: PlannerSpec {
            v_step: Some(0.25),
            retries: Some(5),
            // Rollout endpoints must settle clear of the duct mouths.
            min_escape_separation: Some(duct + 0.3),
            ..PlannerSpec::default()
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{edge_is_free, interpolate, is_collision, Configuration};
    use nalgebra::Vector3;

    #[test]
    fn generated_scenes_lower_cleanly() {
        for kind in [SceneKind::SingleWall, SceneKind::DualWall] {
            for deg in [0.0, 30.0, 50.0, 85.0] {
                let file = build_scene(kind, deg);
                let (scene, robot, _) = file.lower().unwrap();
                assert!(!is_collision(&scene.start, &scene, &robot));
                assert!(!is_collision(&scene.goal, &scene, &robot));
            }
        }
    }

    /// The level straight line at hole height threads the opening at zero
    /// tilt and is blocked at steep ones, where the pass needs an aligned
    /// attitude along a longer duct.
    #[test]
    fn direct_level_crossing_blocked_at_steep_openings() {
        for (deg, expect_free) in [(0.0, true), (50.0, false), (85.0, false)] {
            let file = build_scene(SceneKind::SingleWall, deg);
            let (scene, robot, _) = file.lower().unwrap();
            let a = Configuration::identity_at(Vector3::new(-2.2, 0.0, 2.6));
            let b = Configuration::identity_at(Vector3::new(2.2, 0.0, 2.6));
            assert_eq!(
                edge_is_free(&a, &b, &scene, &robot, 0.02),
                expect_free,
                "unexpected direct-crossing result for the {deg} deg wall"
            );
        }
    }

    /// Probes a dense grid of crossing edges to look for through-gaps other
    /// than the opening. Every free crossing must pass near the hole.
    #[test]
    fn only_the_aperture_admits_straight_crossings() {
        for deg in [0.0, 50.0, 85.0] {
            let file = build_scene(SceneKind::SingleWall, deg);
            let (scene, robot, _) = file.lower().unwrap();
            let theta = (deg as f64).to_radians();
            let axis = Vector3::new(theta.cos(), 0.0, -theta.sin());
            let q = nalgebra::UnitQuaternion::from_axis_angle(
                &nalgebra::Vector3::y_axis(),
                theta,
            );
            let reach = duct_half_length(deg) + 0.6;
            let mut crossings = 0;
            let mut ny = -1.0;
            while ny <= 1.0 {
                let mut nz = 0.3;
                while nz <= 3.8 {
                    // A straight probe through the wall plane, oriented and
                    // directed along the passage axis.
                    let mid = Vector3::new(0.0, ny, nz);
                    let a = Configuration::new(mid - axis * reach, q);
                    let b = Configuration::new(mid + axis * reach, q);
                    if edge_is_free(&a, &b, &scene, &robot, 0.02) {
                        crossings += 1;
                        let hole = Vector3::new(0.0, 0.0, 2.6);
                        assert!(
                            (mid - hole).norm() < 0.8,
                            "{deg} deg: free crossing far from the hole at {mid:?}"
                        );
                    }
                    nz += 0.1;
                }
                ny += 0.1;
            }
            assert!(crossings > 0, "{deg} deg: no crossing found at all");
        }
    }

    /// A pose sweep along the passage axis clears the opening when aligned.
    #[test]
    fn aligned_sweep_through_the_hole_is_free() {
        for deg in [0.0, 30.0, 50.0, 85.0] {
            let file = build_scene(SceneKind::DualWall, deg);
            let (scene, robot, _) = file.lower().unwrap();
            let theta = (deg as f64).to_radians();
            let q = nalgebra::UnitQuaternion::from_axis_angle(&nalgebra::Vector3::y_axis(), theta);
            let axis = Vector3::new(theta.cos(), 0.0, -theta.sin());
            let reach = duct_half_length(deg) + 0.4;
            for wx in [-1.6, 1.6] {
                let hole = Vector3::new(wx, 0.0, 2.6);
                let a = Configuration::new(hole - axis * reach, q);
                let b = Configuration::new(hole + axis * reach, q);
                let n = 60;
                for k in 0..=n {
                    let c = interpolate(&a, &b, k as f64 / n as f64);
                    assert!(
                        !is_collision(&c, &scene, &robot),
                        "{deg} deg wall at {wx}: blocked at step {k}"
                    );
                }
            }
        }
    }

    /// Steeper openings demand attitude alignment: at 50 deg and beyond the
    /// level pose no longer fits through.
    #[test]
    fn level_pose_fits_only_shallow_openings() {
        let fits = |deg: f64| {
            let file = build_scene(SceneKind::SingleWall, deg);
            let (scene, robot, _) = file.lower().unwrap();
            let c = Configuration::identity_at(Vector3::new(0.0, 0.0, 2.2));
            !is_collision(&c, &scene, &robot)
        };
        assert!(fits(0.0));
        assert!(!fits(50.0));
        assert!(!fits(85.0));
    }

    #[test]
    fn duct_length_grows_with_the_opening_angle() {
        let mut last = 0.0;
        for deg in [0.0, 30.0, 50.0, 85.0] {
            let d = duct_half_length(deg);
            assert!(d > last);
            last = d;
        }
        assert!((duct_half_length(0.0) - BASE_THICK).abs() < 1e-12);
    }
}
