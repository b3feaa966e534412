use kat_core::planner::kat;
use kat_core::scenes::{build_scene, SceneKind};
use std::time::Duration;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let kind = if args.get(1).map(|s| s.as_str()) == Some("dual") {
        SceneKind::DualWall
    } else {
        SceneKind::SingleWall
    };
    let deg: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(50.0);
    let trials: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(5);

    let (scene, robot, params) = build_scene(kind, deg).lower().unwrap();
    let mut successes = 0;
    for seed in 0..trials {
        let t0 = std::time::Instant::now();
        let (plan, report) = kat(&scene, &robot, &params, seed, Duration::from_secs(60), false);
        match plan {
            Ok(p) => {
                successes += 1;
                println!(
                    "seed {seed}: OK in {:.1}s  nodes={} rrt={:.1}s esc={:?} vmax={:.2} segs={}",
                    t0.elapsed().as_secs_f64(),
                    report.sampled_nodes,
                    report.rrt_time,
                    report.escape_speeds,
                    p.max_speed(),
                    p.segments.len(),
                );
            }
            Err(e) => {
                println!(
                    "seed {seed}: FAIL in {:.1}s  nodes={} stage={} ({})",
                    t0.elapsed().as_secs_f64(),
                    report.sampled_nodes,
                    e.stage,
                    e.source
                );
                if std::env::var("PROBE_VERBOSE").is_ok() {
                    for line in &report.attempt_log {
                        println!("    {line}");
                    }
                }
            }
        }
    }
    println!("success {successes}/{trials}");
}
