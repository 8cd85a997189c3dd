//! Dataset-level invariants of guided and noisy collection.

use mpcguide::dataset::{Dataset, Status};
use mpcguide::expert::Controller;
use mpcguide::guidance::{collect, collect_noisy, collect_plain, GuidanceConfig, NoiseSpec};
use mpcguide::scenario::Scenario;
use mpcguide::MppiConfig;

fn guidance(ratio: f64, seed: u64) -> GuidanceConfig {
    GuidanceConfig {
        d_max_ratio: ratio,
        mppi: MppiConfig::dubins(0.0),
        per_step_resample: true,
        warm_start: true,
        seed,
    }
}

#[test]
fn labels_are_clean_and_disturbances_bang_bang() {
    let s = Scenario::dubins_corridor();
    let data = collect(&s, &s.expert, &guidance(0.5, 3), 4, s.demo_length).unwrap();
    let world = s.worlds.world_for(0).unwrap();
    let mut nonzero = 0;
    for (_, r) in data.records() {
        assert_eq!(s.expert.act(&world, &r.state), r.expert_action.0);
        let d = r.applied_disturbance[0];
        assert!(d == 0.0 || d.abs() == r.d_bar[0], "{d} vs {}", r.d_bar[0]);
        assert!(r.d_bar_ratio >= 0.0 && r.d_bar_ratio < 0.5);
        nonzero += (d != 0.0) as usize;
    }
    assert!(nonzero > data.num_records() / 2);
}

#[test]
fn zero_bound_and_zero_noise_match_plain_collection() {
    let s = Scenario::dubins_corridor();
    let plain = collect_plain(&s, &s.expert, 9, 3, 60).unwrap();
    assert_eq!(collect(&s, &s.expert, &guidance(0.0, 9), 3, 60).unwrap(), plain);
    assert_eq!(collect_noisy(&s, &s.expert, NoiseSpec::Gaussian { sigma_ratio: 0.0 }, 9, 3, 60).unwrap(), plain);
    assert_eq!(collect_plain(&s, &s.expert, 9, 3, 60).unwrap(), plain);
}

#[test]
fn csv_round_trip_of_collected_data() {
    let s = Scenario::quad_forest(1);
    let data =
        collect(&s, &s.expert, &GuidanceConfig { mppi: MppiConfig::quad4d(0.0), ..guidance(0.5, 1) }, 2, 30).unwrap();
    let mut buf = Vec::new();
    data.write_csv(&mut buf).unwrap();
    let back = Dataset::read_csv(buf.as_slice(), &[0.1745, 0.1745]).unwrap();
    assert_eq!(back.num_records(), data.num_records());
    for ((_, a), (_, b)) in back.records().zip(data.records()) {
        assert_eq!(a.state, b.state);
        assert_eq!(a.expert_action, b.expert_action);
        assert_eq!(a.applied_disturbance, b.applied_disturbance);
        assert_eq!(a.d_bar_ratio, b.d_bar_ratio);
    }
}

fn disturbances(data: &Dataset) -> Vec<f64> {
    data.records().map(|(_, r)| r.applied_disturbance[0]).collect()
}

#[test]
fn uniform_noise_is_flat() {
    let s = Scenario::dubins_corridor();
    let a = 0.4;
    let data = collect_noisy(&s, &s.expert, NoiseSpec::Uniform { half_width_ratio: a }, 5, 120, s.demo_length).unwrap();
    let d = disturbances(&data);
    assert!(d.len() >= 10_000, "only {} records", d.len());
    let bins = 10;
    let mut counts = vec![0usize; bins];
    for v in &d {
        assert!(v.abs() <= a);
        counts[(((v + a) / (2.0 * a) * bins as f64) as usize).min(bins - 1)] += 1;
    }
    let expected = d.len() as f64 / bins as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 99.9th percentile of chi-square with 9 degrees of freedom.
    assert!(chi2 < 27.88, "chi2 = {chi2}, counts {counts:?}");
}

#[test]
fn gaussian_noise_is_unbiased() {
    let s = Scenario::dubins_corridor();
    let sigma = 0.3;
    let data = collect_noisy(&s, &s.expert, NoiseSpec::Gaussian { sigma_ratio: sigma }, 6, 40, s.demo_length).unwrap();
    let d = disturbances(&data);
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    assert!(mean.abs() < 3.0 * sigma / n.sqrt(), "mean {mean} over {n} records");
}

#[test]
fn collection_statuses_are_recorded() {
    let s = Scenario::dubins_corridor();
    let data = collect(&s, &s.expert, &guidance(0.9, 2), 3, 5).unwrap();
    assert!(data.demos.iter().all(|d| d.terminal_status == Status::Timeout && d.records.len() == 5));
}
