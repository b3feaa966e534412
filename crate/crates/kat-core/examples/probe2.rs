use kat_core::control::is_near_holonomic;
use kat_core::narrow::{cluster_members, max_margin_sample, narrow_points, path_tangent};
use kat_core::planner::{plan_fb, rollout, Direction, RolloutCtx};
use kat_core::rrt;
use kat_core::scenes::{build_scene, SceneKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Duration;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let deg: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(50.0);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let kind = if args.get(3).map(|s| s.as_str()) == Some("dual") {
        SceneKind::DualWall
    } else {
        SceneKind::SingleWall
    };

    let (scene, robot, params) = build_scene(kind, deg).lower().unwrap();
    let (path, stats) = rrt::plan(&scene, &robot, kat_core::planner::derive_seed(seed, 0xA0, 0, 0), Duration::from_secs(60), &params.rrt);
    let path = path.expect("rrt");
    println!("rrt: {} nodes, {:.2}s, len {:.2}", stats.sampled_nodes, stats.elapsed, path.length());
    let smoothed = rrt::smooth(&path, &scene, &robot, params.drive.smooth_iterations, kat_core::planner::derive_seed(seed, 0xA1, 0, 0), 0.01);
    println!("smoothed len {:.2}", smoothed.length());
    let pts: Vec<_> = narrow_points(&smoothed, &scene, &robot, params.narrow.h)
        .into_iter()
        .map(|c| { let r = kat_core::world::canonical_box_attitude(&c.r, &robot.half_extents); kat_core::world::Configuration::new(c.p, kat_core::world::swing_attitude(&r)) })
        .collect();
    println!("narrow points: {}", pts.len());
    for p in &pts {
        println!("  pt ({:.2},{:.2},{:.2}) ang={:.0}deg", p.p.x, p.p.y, p.p.z, p.r.angle().to_degrees());
    }
    let clusters = cluster_members(&pts, params.narrow.link_radius);
    for (ci, members) in clusters.iter().enumerate() {
        let center = kat_core::narrow::cluster_centroids(members, f64::INFINITY)[0];
        let tangent = path_tangent(&smoothed, &center, params.narrow.h);
        println!("cluster {ci}: center ({:.2},{:.2},{:.2}) ang={:.1} tangent ({:.2},{:.2},{:.2})",
            center.p.x, center.p.y, center.p.z, center.r.angle().to_degrees(),
            tangent.x, tangent.y, tangent.z);
        let mut rng = ChaCha8Rng::seed_from_u64(kat_core::planner::derive_seed(seed, 0xB0, ci as u64, 0));
        let refined = max_margin_sample(&center, &tangent, &scene, &robot,
            params.narrow.rho, params.narrow.samples, params.narrow.theta_max,
            params.narrow.delta, params.narrow.objective, &mut rng).expect("margin");
        let m = kat_core::world::margin(&refined, &scene, &robot);
        println!("  refined ({:.2},{:.2},{:.2}) ang={:.1} margin={:.3}",
            refined.p.x, refined.p.y, refined.p.z, refined.r.angle().to_degrees(), m);
        let esc = kat_core::escape::escape_direction(&refined, &tangent, &scene, &robot,
            params.escape.samples, params.escape.mu, params.escape.sigma, &mut rng).expect("escape");
        println!("  escape dir ({:.2},{:.2},{:.2}) support {}", esc.dir.x, esc.dir.y, esc.dir.z, esc.support);
        let tight = params.weights.with_epsilon(params.drive.rollout_epsilon_factor * params.weights.epsilon);
        let ctx = RolloutCtx {
            scene: &scene, robot: &robot, quad: &params.quad, gains: &params.gains,
            weights: &tight, t_max: params.drive.t_max, dt: params.drive.dt, resolution: 0.01,
        };
        // Try each speed manually, printing outcomes.
        for k in 1..=16 {
            let speed = 0.5 * k as f64;
            let s_nar = kat_core::dynamics::State {
                p: refined.p,
                rot: refined.r.to_rotation_matrix(),
                v: speed * esc.dir,
                omega: nalgebra::Vector3::zeros(),
            };
            let fwd = rollout(&s_nar, Direction::Forward, &ctx);
            let bwd = rollout(&s_nar, Direction::Backward, &ctx);
            let desc = |r: &Result<kat_core::planner::StateTrajectory, kat_core::planner::RolloutFailure>, last: bool| match r {
                Ok(t) => {
                    let e = if last { t.last_state() } else { t.first_state() };
                    let proj = (e.p - refined.p).dot(&esc.dir);
                    format!("ok {:.2}s end ({:.2},{:.2},{:.2}) proj {:+.2}", t.duration(), e.p.x, e.p.y, e.p.z, proj)
                }
                Err(e) => format!("{e}"),
            };
            println!("  v={speed:.1}: fwd {} | bwd {}", desc(&fwd, true), desc(&bwd, false));
        }
        let (res, attempts) = plan_fb(&refined, &esc.dir, (1..=40).map(|k| 0.5 * k as f64), 0.5, &ctx);
        match res {
            Ok(p) => {
                let first = p.trajectory.first_state();
                let last = p.trajectory.last_state();
                println!("  plan_fb OK v={} first ({:.2},{:.2},{:.2}) last ({:.2},{:.2},{:.2}) nh {} {}",
                    p.escape_speed, first.p.x, first.p.y, first.p.z, last.p.x, last.p.y, last.p.z,
                    is_near_holonomic(first, &params.weights), is_near_holonomic(last, &params.weights));
            }
            Err(e) => println!("  plan_fb FAIL: {e} ({} attempts)", attempts.len()),
        }
    }
}
