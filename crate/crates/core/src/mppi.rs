//! Sampling-based solver for the single-player safety maximization.
//!
//! Given a start state, find the combined-input sequence `w` (bounded by
//! `w̄ = ū − d̄`) that maximizes the worst safety margin along the rollout.
//! Samples are scored in parallel, the `elite_k` best are kept and combined
//! with max-shifted exponential weights.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Control, Dynamics, State};
use crate::error::{Error, Result};
use crate::seed;
use crate::world::World;

/// Solver hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MppiConfig {
    pub num_samples: usize,
    pub horizon: usize,
    pub elite_k: usize,
    pub temperature: f64,
    /// Per-component bound `w̄` on the combined input.
    pub input_bound: Vec<f64>,
    /// Per-component perturbation std; `0.5·w̄` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling_std: Option<Vec<f64>>,
    pub seed: u64,
}

impl MppiConfig {
    /// Dubins verification settings: N=1000, H=20, K=10.
    pub fn dubins(input_bound: f64) -> Self {
        Self {
            num_samples: 1000,
            horizon: 20,
            elite_k: 10,
            temperature: 0.05,
            input_bound: vec![input_bound],
            sampling_std: None,
            seed: 0,
        }
    }

    /// Quadrotor settings: N=1000, H=30, K=100.
    pub fn quad4d(input_bound: f64) -> Self {
        Self {
            num_samples: 1000,
            horizon: 30,
            elite_k: 100,
            temperature: 0.05,
            input_bound: vec![input_bound; 2],
            sampling_std: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_samples == 0 || self.elite_k == 0 || self.elite_k > self.num_samples {
            return Err(Error::Config("mppi requires 1 <= elite_k <= num_samples".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("mppi horizon must be at least 1".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("mppi temperature must be positive".into()));
        }
        if self.input_bound.is_empty() || self.input_bound.iter().any(|b| !(*b >= 0.0)) {
            return Err(Error::Config("mppi input bound must be non-negative".into()));
        }
        if let Some(std) = &self.sampling_std {
            if std.len() != self.input_bound.len() || std.iter().any(|s| !(*s > 0.0)) {
                return Err(Error::Config("mppi sampling std must be positive per component".into()));
            }
        }
        Ok(())
    }

    pub fn with_bound(mut self, bound: Vec<f64>) -> Self {
        self.input_bound = bound;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn std(&self) -> Vec<f64> {
        match &self.sampling_std {
            Some(s) => s.clone(),
            None => self.input_bound.iter().map(|b| 0.5 * b).collect(),
        }
    }
}

/// `H × n_u` input sequence, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSequence {
    dim: usize,
    data: Vec<f64>,
}

impl InputSequence {
    pub fn zeros(horizon: usize, dim: usize) -> Self {
        Self { dim, data: vec![0.0; horizon * dim] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Contract("input rows have unequal lengths".into()));
        }
        Ok(Self { dim, data: rows.concat() })
    }

    pub fn horizon(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Drops the first row and repeats the last one (receding-horizon warm start).
    pub fn shifted(&self) -> Self {
        let h = self.horizon();
        if h <= 1 {
            return self.clone();
        }
        let mut data = self.data[self.dim..].to_vec();
        data.extend_from_slice(self.row(h - 1));
        Self { dim: self.dim, data }
    }

    /// Clamps every entry to `±bound` component-wise.
    pub fn clamp(&mut self, bound: &[f64]) {
        for row in self.data.chunks_exact_mut(self.dim.max(1)) {
            for (v, &b) in row.iter_mut().zip(bound) {
                *v = v.clamp(-b, b);
            }
        }
    }

    pub fn within(&self, bound: &[f64]) -> bool {
        self.rows().all(|r| r.iter().zip(bound).all(|(v, b)| v.abs() <= *b))
    }
}

/// Solver output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MppiResult {
    /// The weighted combination `w*`.
    pub optimal_sequence: InputSequence,
    /// Safety cost of `w*`.
    pub cost: f64,
    /// Elite costs in descending order.
    pub elite_costs: Vec<f64>,
    /// Normalized weights aligned with `elite_costs`.
    pub elite_weights: Vec<f64>,
    /// Indices of the elite samples.
    pub elite_indices: Vec<usize>,
    pub samples_evaluated: usize,
    /// Whether the final clamp changed the weighted combination.
    pub clamped: bool,
}

/// Worst margin along the rollout: `min_k l(x_k)` for `k = 0..=H`.
///
/// Allocation-light variant of [`safety_cost`] used in the inner loops.
/// Returns `None` if the rollout produces a non-finite state.
pub fn safety_cost_raw<M: Dynamics + ?Sized>(model: &M, world: &World, x0: &[f64], inputs: &[f64]) -> Option<f64> {
    let nx = model.state_dim();
    let nu = model.control_dim();
    let mut buf = [0.0f64; 16];
    let (cur, next) = buf.split_at_mut(8);
    debug_assert!(nx <= 8);
    cur[..nx].copy_from_slice(x0);
    let mut j = world.signed_distance(model.position(cur));
    for u in inputs.chunks_exact(nu) {
        model.step_into(&cur[..nx], u, &mut next[..nx]);
        if next[..nx].iter().any(|v| !v.is_finite()) {
            return None;
        }
        cur[..nx].copy_from_slice(&next[..nx]);
        j = j.min(world.signed_distance(model.position(cur)));
    }
    Some(j)
}

/// Safety cost `J = min_k l(x_k)` of `seq` from `x0`.
pub fn safety_cost<M: Dynamics + ?Sized>(model: &M, world: &World, x0: &State, seq: &InputSequence) -> Result<f64> {
    if x0.len() != model.state_dim() {
        return Err(Error::Contract("state dimension mismatch".into()));
    }
    if seq.horizon() > 0 && seq.dim() != model.control_dim() {
        return Err(Error::Contract("input dimension mismatch".into()));
    }
    safety_cost_raw(model, world, x0, seq.as_slice()).ok_or_else(|| {
        // Locate the diverging step for the error.
        let mut x = x0.to_vec();
        let mut out = x.clone();
        let mut step = 0;
        for (k, u) in seq.rows().enumerate() {
            model.step_into(&x, u, &mut out);
            std::mem::swap(&mut x, &mut out);
            if x.iter().any(|v| !v.is_finite()) {
                step = k + 1;
                break;
            }
        }
        Error::RolloutDiverged { step }
    })
}

/// Samples, scores and combines input sequences. Deterministic given
/// `config.seed`: sample `i` draws from its own substream, and selection and
/// combination run in a fixed order.
pub fn solve<M: Dynamics + ?Sized>(
    model: &M,
    world: &World,
    x0: &State,
    config: &MppiConfig,
    warm_start: Option<&InputSequence>,
) -> Result<MppiResult> {
    config.validate()?;
    let nu = model.control_dim();
    let h = config.horizon;
    if config.input_bound.len() != nu {
        return Err(Error::Config(format!(
            "mppi input bound has {} components, model has {nu}",
            config.input_bound.len()
        )));
    }
    if x0.len() != model.state_dim() {
        return Err(Error::Contract("state dimension mismatch".into()));
    }
    let mut nominal = match warm_start {
        Some(ws) if ws.horizon() == h && ws.dim() == nu => ws.clone(),
        Some(_) => return Err(Error::Contract("warm start shape does not match the horizon".into())),
        None => InputSequence::zeros(h, nu),
    };
    nominal.clamp(&config.input_bound);
    let std = config.std();
    let bound = &config.input_bound;

    let samples: Vec<(Vec<f64>, Option<f64>)> = (0..config.num_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::stream_rng(config.seed, i as u64);
            let seq: Vec<f64> = nominal
                .as_slice()
                .iter()
                .enumerate()
                .map(|(j, &m)| {
                    let c = j % nu;
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (m + std[c] * z).clamp(-bound[c], bound[c])
                })
                .collect();
            let j = safety_cost_raw(model, world, x0, &seq);
            (seq, j)
        })
        .collect();

    let mut ranked: Vec<(usize, f64)> =
        samples.iter().enumerate().filter_map(|(i, (_, j))| j.map(|j| (i, j))).collect();
    if ranked.is_empty() {
        return Err(Error::SolverFailed("all sampled rollouts diverged".into()));
    }
    // Highest cost first; index breaks ties.
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(config.elite_k);

    let j_max = ranked[0].1;
    let raw: Vec<f64> = ranked.iter().map(|&(_, j)| ((j - j_max) / config.temperature).exp()).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();

    let mut combined = vec![0.0; h * nu];
    for (&(i, _), &w) in ranked.iter().zip(&weights) {
        for (c, s) in combined.iter_mut().zip(&samples[i].0) {
            *c += w * s;
        }
    }
    let mut optimal_sequence = InputSequence { dim: nu, data: combined };
    let before = optimal_sequence.data.clone();
    optimal_sequence.clamp(bound);
    let clamped = before != optimal_sequence.data;
    let cost = safety_cost_raw(model, world, x0, optimal_sequence.as_slice())
        .ok_or_else(|| Error::SolverFailed("weighted sequence diverged".into()))?;

    Ok(MppiResult {
        optimal_sequence,
        cost,
        elite_costs: ranked.iter().map(|r| r.1).collect(),
        elite_weights: weights,
        elite_indices: ranked.iter().map(|r| r.0).collect(),
        samples_evaluated: config.num_samples,
        clamped,
    })
}

/// First row of `w*`.
pub fn extract_first_input(result: &MppiResult) -> Control {
    Control(result.optimal_sequence.row(0).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Dubins, Quad4d};
    use crate::scenario::verification_world;
    use crate::world::{Bounds, Circle, Goal};
    use proptest::prelude::*;
    use rand::Rng;

    fn dubins_setup() -> (Dubins, World, State) {
        (Dubins::default(), verification_world(), State(vec![2.0, 0.8, 0.0]))
    }

    fn distance(a: &InputSequence, b: &[f64]) -> f64 {
        a.as_slice().iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    /// Regenerates sample `i` exactly as `solve` does.
    fn sample(config: &MppiConfig, nominal: &InputSequence, i: usize) -> Vec<f64> {
        let mut rng = seed::stream_rng(config.seed, i as u64);
        let nu = nominal.dim();
        let std = config.std();
        nominal
            .as_slice()
            .iter()
            .enumerate()
            .map(|(j, &m)| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (m + std[j % nu] * z).clamp(-config.input_bound[j % nu], config.input_bound[j % nu])
            })
            .collect()
    }

    #[test]
    fn safety_cost_examples() {
        let w =
            World::new(vec![Circle::new(0.0, 3.0, 1.0)], Goal::Line { x: 50.0 }, Bounds::new(-5.0, 60.0, -5.0, 5.0))
                .unwrap();
        let m = Dubins::default();
        // Driving along y = 0 under a circle of radius 1 at height 3: closest approach 2 m at x = 0.
        let x0 = State(vec![-1.0, 0.0, 0.0]);
        let seq = InputSequence::zeros(20, 1);
        assert!((safety_cost(&m, &w, &x0, &seq).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(safety_cost(&m, &w, &x0, &InputSequence::zeros(0, 1)).unwrap(), w.signed_distance([-1.0, 0.0]));
        let up = State(vec![0.0, 1.0, std::f64::consts::FRAC_PI_2]);
        assert!(safety_cost(&m, &w, &up, &seq).unwrap() < 0.0);
    }

    #[test]
    fn single_sample_is_returned_with_unit_weight() {
        let (m, w, x) = dubins_setup();
        let cfg = MppiConfig { num_samples: 1, elite_k: 1, ..MppiConfig::dubins(0.5) };
        let r = solve(&m, &w, &x, &cfg, None).unwrap();
        assert_eq!(r.elite_weights, vec![1.0]);
        assert_eq!(r.optimal_sequence.as_slice(), sample(&cfg, &InputSequence::zeros(20, 1), 0).as_slice());
        assert_eq!(r.samples_evaluated, 1);
    }

    #[test]
    fn tiny_temperature_selects_the_best_elite() {
        let (m, w, x) = dubins_setup();
        let cfg = MppiConfig { temperature: 1e-9, ..MppiConfig::dubins(0.5) };
        let r = solve(&m, &w, &x, &cfg, None).unwrap();
        let best = sample(&cfg, &InputSequence::zeros(20, 1), r.elite_indices[0]);
        assert!(distance(&r.optimal_sequence, &best) < 1e-12);
        assert!(r.elite_costs.windows(2).all(|p| p[0] >= p[1]));
        assert_eq!(r.elite_costs.len(), 10);
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let (m, w, x) = dubins_setup();
        let cfg = MppiConfig::dubins(0.5).with_seed(11);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| solve(&m, &w, &x, &cfg, None).unwrap())
        };
        let a = run(1);
        assert_eq!(a, run(3));
        assert_eq!(a, solve(&m, &w, &x, &cfg, None).unwrap());
        assert_ne!(a, solve(&m, &w, &x, &cfg.clone().with_seed(12), None).unwrap());
    }

    #[test]
    fn softmax_limit_distance_shrinks_with_temperature() {
        for seed in 0..20 {
            let (m, w, _) = dubins_setup();
            let mut rng = seed::stream_rng(seed, 99);
            let x = loop {
                let p = [rng.random_range(0.0..6.0), rng.random_range(-3.0..3.0)];
                if w.signed_distance(p) > 0.1 {
                    break State(vec![p[0], p[1], rng.random_range(-3.0..3.0)]);
                }
            };
            let mut last = f64::INFINITY;
            for lambda in [1.0, 0.1, 0.01, 1e-6] {
                let cfg = MppiConfig { temperature: lambda, ..MppiConfig::dubins(0.5) }.with_seed(seed);
                let r = solve(&m, &w, &x, &cfg, None).unwrap();
                let best = sample(&cfg, &InputSequence::zeros(20, 1), r.elite_indices[0]);
                let d = distance(&r.optimal_sequence, &best);
                assert!(d <= last + 1e-12, "seed {seed}, lambda {lambda}: {d} > {last}");
                last = d;
            }
        }
    }

    fn random_free_state(w: &World, seed: u64) -> Option<State> {
        let mut rng = seed::stream_rng(seed, 7);
        let p = [rng.random_range(0.0..6.0), rng.random_range(-3.0..3.0)];
        (w.signed_distance(p) > 0.0).then(|| State(vec![p[0], p[1], rng.random_range(-3.0..3.0)]))
    }

    // The safety cost is not concave in the input sequence, so a convex
    // combination of elites can score below every one of them (averaging a
    // left and a right dodge). The bound holds on the vast majority of states.
    #[test]
    fn weighted_cost_rarely_falls_below_worst_elite() {
        let (m, w, _) = dubins_setup();
        let (mut checked, mut violations) = (0, Vec::new());
        for seed in 0..100u64 {
            let Some(x) = random_free_state(&w, seed) else { continue };
            let r = solve(&m, &w, &x, &MppiConfig::dubins(0.5).with_seed(seed), None).unwrap();
            assert!(!r.clamped);
            checked += 1;
            if r.cost < *r.elite_costs.last().unwrap() {
                violations.push(seed);
            }
        }
        assert!(violations.len() * 20 <= checked, "{violations:?} of {checked}");
    }

    #[test]
    fn weighted_combination_can_fall_below_worst_elite() {
        let (m, w, _) = dubins_setup();
        let x = random_free_state(&w, 47).unwrap();
        let r = solve(&m, &w, &x, &MppiConfig::dubins(0.5).with_seed(47), None).unwrap();
        assert!(r.cost < *r.elite_costs.last().unwrap());
    }

    #[test]
    fn warm_started_resolve_stays_in_bounds() {
        let (m, w, x) = dubins_setup();
        let cfg = MppiConfig::dubins(0.5);
        let r = solve(&m, &w, &x, &cfg, None).unwrap();
        let shifted = r.optimal_sequence.shifted();
        assert_eq!(shifted.row(0), r.optimal_sequence.row(1));
        assert_eq!(shifted.row(19), r.optimal_sequence.row(19));
        let next = m.step(&x, &extract_first_input(&r)).unwrap();
        let r2 = solve(&m, &w, &next, &cfg.clone().with_seed(1), Some(&shifted)).unwrap();
        let first = extract_first_input(&r2);
        assert!(first[0].abs() <= 0.5);
        assert_eq!(first.0, r2.optimal_sequence.row(0).to_vec());
        let bad = InputSequence::zeros(5, 1);
        assert!(solve(&m, &w, &next, &cfg, Some(&bad)).is_err());
    }

    #[test]
    fn first_input_of_single_step_sequence() {
        let seq = InputSequence::from_rows(&[vec![0.25]]).unwrap();
        let r = MppiResult {
            optimal_sequence: seq,
            cost: 0.0,
            elite_costs: vec![],
            elite_weights: vec![],
            elite_indices: vec![],
            samples_evaluated: 0,
            clamped: false,
        };
        assert_eq!(extract_first_input(&r).0, vec![0.25]);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let (m, w, x) = dubins_setup();
        for cfg in [
            MppiConfig { elite_k: 0, ..MppiConfig::dubins(0.5) },
            MppiConfig { elite_k: 2000, ..MppiConfig::dubins(0.5) },
            MppiConfig { horizon: 0, ..MppiConfig::dubins(0.5) },
            MppiConfig { temperature: 0.0, ..MppiConfig::dubins(0.5) },
            MppiConfig::dubins(-0.1),
            MppiConfig::quad4d(0.1),
        ] {
            assert!(solve(&m, &w, &x, &cfg, None).is_err());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn weights_normalized_and_bounds_respected(
            seed in 0u64..10_000,
            bound in 0.0f64..0.17,
            px in 0.5f64..4.0,
            py in 0.5f64..4.5,
            lambda in 1e-4f64..1.0,
        ) {
            let world = crate::world::generate_world(seed, &crate::world::GenerationSpec::quadrotor()).unwrap();
            prop_assume!(world.signed_distance([px, py]) > 0.0);
            let m = Quad4d::default();
            let cfg = MppiConfig { num_samples: 64, elite_k: 16, temperature: lambda, ..MppiConfig::quad4d(bound) }.with_seed(seed);
            let r = solve(&m, &world, &State(vec![px, py, 1.0, 0.0]), &cfg, None).unwrap();
            let total: f64 = r.elite_weights.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            prop_assert!(r.optimal_sequence.within(&[bound, bound]));
            prop_assert_eq!(r.optimal_sequence.horizon(), 30);
        }
    }
}
