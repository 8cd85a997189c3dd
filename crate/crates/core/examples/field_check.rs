//! Compares the sampled-MPC disturbance field with the grid oracle on the
//! two-obstacle verification world.
//!
//! `cargo run --release --example field_check -- [grid_n] [samples]`

use std::time::Instant;

use mpcguide::guidance::optimal_disturbance;
use mpcguide::oracle::{disturbance_field_mse, value_iteration, GridSpec, GRADIENT_EPS};
use mpcguide::scenario::verification_world;
use mpcguide::{seed, Dubins, MppiConfig};

fn main() -> mpcguide::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let n = args.first().copied().unwrap_or(51);
    let samples = args.get(1).copied().unwrap_or(10_000);
    let model = Dubins::default();
    let world = verification_world();
    let d_bar = 0.5 * model.omega_max();

    let t = Instant::now();
    let grid = value_iteration(&model, &world, &GridSpec::verification(n), d_bar)?;
    println!("value iteration: {} sweeps, residual {:.2e}, {:.1?}", grid.iterations, grid.residual, t.elapsed());

    let base = MppiConfig::dubins(model.omega_max() - d_bar);
    let t = Instant::now();
    let report = disturbance_field_mse(&grid, &world, d_bar, samples, 0, GRADIENT_EPS, |i, x| {
        let cfg = base.clone().with_seed(seed::derive_indexed(0, "field", i as u64));
        Ok(optimal_disturbance(&model, &world, x, &[d_bar], &cfg, None)?.0[0])
    })?;
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    println!("field comparison: {:.1?}", t.elapsed());
    Ok(())
}
