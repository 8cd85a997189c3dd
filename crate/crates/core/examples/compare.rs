//! Runs the Dubins method comparison and prints per-condition rates.
//!
//! `cargo run --release --example compare -- [num_seeds]`

use std::time::Instant;

use mpcguide::eval::{run_experiment, Condition, ExperimentSpec, Method};

fn main() -> mpcguide::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(5);
    let matched = Method::matched_mean_abs_ratio(0.5);
    let mut spec: ExperimentSpec = ExperimentSpec::dubins_default(vec![
        Condition::new(Method::Bc, false),
        Condition::new(Method::SafeGil { d_max_ratio: 0.3 }, false),
        Condition::new(Method::SafeGil { d_max_ratio: 0.5 }, false),
        Condition::new(Method::SafeGil { d_max_ratio: 0.7 }, false),
        Condition::new(Method::GaussianNoise { mean_abs_ratio: matched }, false),
        Condition::new(Method::UniformNoise { mean_abs_ratio: matched }, false),
    ]);
    if std::env::args().nth(2).as_deref() == Some("quad") {
        spec = ExperimentSpec::quad_default(vec![
            Condition::new(Method::Bc, false),
            Condition::new(Method::Bc, true),
            Condition::new(Method::SafeGil { d_max_ratio: 0.5 }, false),
            Condition::new(Method::SafeGil { d_max_ratio: 0.5 }, true),
        ]);
    }
    spec.seeds = (0..seeds).collect();
    if std::env::args().nth(2).as_deref() == Some("quick") {
        spec.conditions.retain(|c| matches!(c.method, Method::Bc | Method::SafeGil { d_max_ratio: 0.5 }));
    }
    let t = Instant::now();
    let report = run_experiment(&spec)?;
    for c in &report.conditions {
        let per: Vec<String> =
            c.per_seed.iter().map(|s| format!("{:.2}/{}", s.summary.collision_rate, s.demo_collisions)).collect();
        println!(
            "{:<16} collision {:.3} ({:.3})  success {:.3}  clearance {:.3}  [{}]",
            c.label,
            c.collision_rate.mean,
            c.collision_rate.std,
            c.success_rate.mean,
            c.mean_min_clearance.mean,
            per.join(" ")
        );
    }
    println!("budgets {:?}, {:.1?}", report.max_steps, t.elapsed());
    Ok(())
}
