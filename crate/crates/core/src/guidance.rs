//! Adversarial disturbance extraction, guided expert composition and
//! safety-guided data collection.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Demonstration, Record, Status};
use crate::dynamics::{Control, Disturbance, Dynamics, State};
use crate::error::{Error, Result};
use crate::expert::Controller;
use crate::mppi::{self, InputSequence, MppiConfig};
use crate::scenario::Scenario;
use crate::seed;
use crate::world::World;

/// Settings for adversarially guided collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    /// `d̄_max / ū`, in `[0, 1)`.
    pub d_max_ratio: f64,
    /// Solver settings; `input_bound` is overwritten with `ū − d̄` at each step.
    pub mppi: MppiConfig,
    /// Resample `d̄ ~ U(0, d̄_max)` every step; otherwise use `d̄_max` throughout.
    #[serde(default = "default_true")]
    pub per_step_resample: bool,
    /// Warm-start each solve with the previous solution shifted by one step.
    #[serde(default = "default_true")]
    pub warm_start: bool,
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.d_max_ratio) {
            return Err(Error::Config("d_max_ratio must lie in [0, 1)".into()));
        }
        // The bound is replaced per step; validate everything else.
        let mut probe = self.mppi.clone();
        probe.input_bound = vec![1.0; probe.input_bound.len().max(1)];
        if let Some(std) = &probe.sampling_std {
            probe.input_bound = vec![1.0; std.len()];
        }
        probe.validate()
    }
}

/// Bang-bang disturbance from the first combined input: `+d̄` where `w* < 0`,
/// `−d̄` where `w* > 0`, and zero where `w* = 0`.
pub fn disturbance_from_first_input(w: &[f64], d_bar: &[f64]) -> Disturbance {
    Disturbance(
        w.iter()
            .zip(d_bar)
            .map(|(&wi, &db)| {
                if wi < 0.0 {
                    db
                } else if wi > 0.0 {
                    -db
                } else {
                    0.0
                }
            })
            .collect(),
    )
}

/// Worst-case disturbance at `x` for per-component bound `d_bar`.
///
/// Solves the single-player problem with bound `ū − d̄` and reads the sign
/// of the first input. Returns the solver result alongside (absent when
/// `d̄ = 0`, in which case no solve is needed).
pub fn optimal_disturbance<M: Dynamics + ?Sized>(
    model: &M,
    world: &World,
    x: &State,
    d_bar: &[f64],
    mppi_config: &MppiConfig,
    warm_start: Option<&InputSequence>,
) -> Result<(Disturbance, Option<mppi::MppiResult>)> {
    let u_bar = model.control_bound();
    if d_bar.len() != u_bar.len() {
        return Err(Error::Contract("d_bar dimension mismatch".into()));
    }
    if d_bar.iter().zip(u_bar).any(|(d, u)| !(*d >= 0.0 && d < u)) {
        return Err(Error::Contract("d_bar must lie in [0, ū) component-wise".into()));
    }
    if d_bar.iter().all(|&d| d == 0.0) {
        return Ok((Disturbance::zeros(d_bar.len()), None));
    }
    let bound: Vec<f64> = u_bar.iter().zip(d_bar).map(|(u, d)| u - d).collect();
    let cfg = mppi_config.clone().with_bound(bound);
    let result = mppi::solve(model, world, x, &cfg, warm_start)?;
    let w = mppi::extract_first_input(&result);
    Ok((disturbance_from_first_input(&w, d_bar), Some(result)))
}

/// `π^G(x) = π*(x) + d`, clamped to `±ū` for execution.
pub fn guided_expert_action(expert_action: &[f64], disturbance: &[f64], u_bar: &[f64]) -> Control {
    Control(expert_action.iter().zip(disturbance).zip(u_bar).map(|((a, d), &b)| (a + d).clamp(-b, b)).collect())
}

/// Random-noise injection baselines. Scales are fractions of `ū`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    Gaussian { sigma_ratio: f64 },
    Uniform { half_width_ratio: f64 },
}

impl NoiseSpec {
    /// Gaussian noise whose expected magnitude equals `mean_abs_ratio·ū`.
    pub fn gaussian_matching(mean_abs_ratio: f64) -> Self {
        NoiseSpec::Gaussian { sigma_ratio: mean_abs_ratio * (std::f64::consts::PI / 2.0).sqrt() }
    }

    /// Uniform noise whose expected magnitude equals `mean_abs_ratio·ū`.
    pub fn uniform_matching(mean_abs_ratio: f64) -> Self {
        NoiseSpec::Uniform { half_width_ratio: 2.0 * mean_abs_ratio }
    }

    fn validate(&self) -> Result<()> {
        let s = match *self {
            NoiseSpec::Gaussian { sigma_ratio } => sigma_ratio,
            NoiseSpec::Uniform { half_width_ratio } => half_width_ratio,
        };
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::Config("noise scale must be non-negative".into()));
        }
        Ok(())
    }
}

/// How the executed action is perturbed during collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Injection {
    Plain { seed: u64 },
    Adversarial(GuidanceConfig),
    Noise { noise: NoiseSpec, seed: u64 },
}

impl Injection {
    pub fn validate(&self) -> Result<()> {
        match self {
            Injection::Plain { .. } => Ok(()),
            Injection::Adversarial(g) => g.validate(),
            Injection::Noise { noise, .. } => noise.validate(),
        }
    }

    fn seed(&self) -> u64 {
        match self {
            Injection::Plain { seed } => *seed,
            Injection::Adversarial(g) => g.seed,
            Injection::Noise { seed, .. } => *seed,
        }
    }
}

/// Algorithm-1 collection with adversarial guidance.
pub fn collect(
    scenario: &Scenario,
    expert: &dyn Controller,
    config: &GuidanceConfig,
    num_demos: usize,
    horizon: usize,
) -> Result<Dataset> {
    collect_with(scenario, expert, &Injection::Adversarial(config.clone()), num_demos, horizon)
}

/// Collection under random noise instead of the adversary. Labels are clean.
pub fn collect_noisy(
    scenario: &Scenario,
    expert: &dyn Controller,
    noise: NoiseSpec,
    seed: u64,
    num_demos: usize,
    horizon: usize,
) -> Result<Dataset> {
    collect_with(scenario, expert, &Injection::Noise { noise, seed }, num_demos, horizon)
}

/// Plain behavior-cloning collection.
pub fn collect_plain(
    scenario: &Scenario,
    expert: &dyn Controller,
    seed: u64,
    num_demos: usize,
    horizon: usize,
) -> Result<Dataset> {
    collect_with(scenario, expert, &Injection::Plain { seed }, num_demos, horizon)
}

/// Shared collection loop. Demonstration `k` draws its start from the
/// `(seed, "init", k)` stream and its disturbances from `(seed, "inject", k)`,
/// so the start states do not depend on the injection scheme.
pub fn collect_with(
    scenario: &Scenario,
    expert: &dyn Controller,
    injection: &Injection,
    num_demos: usize,
    horizon: usize,
) -> Result<Dataset> {
    if num_demos == 0 || horizon == 0 {
        return Err(Error::Config("collection needs at least one demonstration of length >= 1".into()));
    }
    scenario.validate()?;
    injection.validate()?;
    let mut demos = (0..num_demos)
        .into_par_iter()
        .map(|k| collect_one(scenario, expert, injection, k, horizon))
        .collect::<Result<Vec<_>>>()?;
    demos.sort_by_key(|d| d.id);
    Ok(Dataset { demos })
}

fn collect_one(
    scenario: &Scenario,
    expert: &dyn Controller,
    injection: &Injection,
    k: usize,
    horizon: usize,
) -> Result<Demonstration> {
    let model = &scenario.model;
    let u_bar = model.control_bound().to_vec();
    let nu = u_bar.len();
    let root = injection.seed();
    let world = scenario.worlds.world_for(k as u64)?;
    let mut init_rng = seed::stream_rng(seed::derive_indexed(root, "init", k as u64), 0);
    let mut rng = seed::stream_rng(seed::derive_indexed(root, "inject", k as u64), 0);
    let mppi_root = seed::derive_indexed(root, "mppi", k as u64);

    let mut x = scenario.start.sample(&mut init_rng, &world)?;
    let mut records = Vec::with_capacity(horizon);
    let mut warm: Option<InputSequence> = None;
    let mut status = Status::Timeout;

    for t in 0..horizon {
        let action = expert.act(&world, &x);
        let (disturbance, ratio) = match injection {
            Injection::Plain { .. } => (Disturbance::zeros(nu), 0.0),
            Injection::Adversarial(g) => {
                let ratio = if g.per_step_resample { g.d_max_ratio * rng.random::<f64>() } else { g.d_max_ratio };
                let d_bar: Vec<f64> = u_bar.iter().map(|b| ratio * b).collect();
                let cfg = g.mppi.clone().with_seed(seed::derive_indexed(mppi_root, "step", t as u64));
                let ws = if g.warm_start { warm.as_ref() } else { None };
                let (d, result) = optimal_disturbance(model, &world, &x, &d_bar, &cfg, ws)?;
                warm = result.map(|r| r.optimal_sequence.shifted());
                (d, ratio)
            }
            Injection::Noise { noise, .. } => {
                let d = u_bar
                    .iter()
                    .map(|b| match *noise {
                        NoiseSpec::Gaussian { sigma_ratio } => {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            sigma_ratio * b * z
                        }
                        NoiseSpec::Uniform { half_width_ratio } => {
                            half_width_ratio * b * (2.0 * rng.random::<f64>() - 1.0)
                        }
                    })
                    .collect();
                (Disturbance(d), 0.0)
            }
        };
        let executed = guided_expert_action(&action, &disturbance, &u_bar);
        records.push(Record {
            d_bar: u_bar.iter().map(|b| ratio * b).collect(),
            state: x.clone(),
            expert_action: Control(action),
            applied_disturbance: disturbance,
            d_bar_ratio: ratio,
        });
        let next = model.step(&x, &executed)?;
        let p = model.position(&next);
        if next.iter().any(|v| !v.is_finite()) || world.is_collision(p) {
            status = Status::Collision;
            break;
        }
        if world.is_at_goal(p) {
            status = Status::Goal;
            break;
        }
        x = next;
    }
    Ok(Demonstration { id: k, world_index: k as u64, records, terminal_status: status })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::verification_world;
    use crate::Dubins;

    #[test]
    fn eq6_sign_rule() {
        assert_eq!(disturbance_from_first_input(&[0.3], &[0.5]).0, vec![-0.5]);
        assert_eq!(disturbance_from_first_input(&[-0.3], &[0.5]).0, vec![0.5]);
        assert_eq!(disturbance_from_first_input(&[0.0], &[0.5]).0, vec![0.0]);
        assert_eq!(disturbance_from_first_input(&[0.3, -0.2], &[0.0, 0.1]).0, vec![0.0, 0.1]);
    }

    #[test]
    fn zero_bound_gives_zero_disturbance() {
        let m = Dubins::default();
        let (d, r) = optimal_disturbance(
            &m,
            &verification_world(),
            &State(vec![2.0, 0.8, 0.0]),
            &[0.0],
            &MppiConfig::dubins(1.0),
            None,
        )
        .unwrap();
        assert_eq!(d.0, vec![0.0]);
        assert!(r.is_none());
    }

    #[test]
    fn bound_at_or_above_u_bar_is_rejected() {
        let m = Dubins::default();
        let x = State(vec![2.0, 0.8, 0.0]);
        assert!(optimal_disturbance(&m, &verification_world(), &x, &[1.0], &MppiConfig::dubins(1.0), None).is_err());
    }

    #[test]
    fn guided_action_examples() {
        assert!((guided_expert_action(&[0.2], &[-0.5], &[1.0])[0] + 0.3).abs() < 1e-15);
        assert_eq!(guided_expert_action(&[0.9], &[0.5], &[1.0]).0, vec![1.0]);
        assert_eq!(guided_expert_action(&[0.37], &[0.0], &[1.0]).0, vec![0.37]);
    }

    #[test]
    fn matched_noise_energy() {
        // E|N(0, σ)| = σ·sqrt(2/π); E|U(-a, a)| = a/2.
        if let NoiseSpec::Gaussian { sigma_ratio } = NoiseSpec::gaussian_matching(0.25) {
            assert!((sigma_ratio * (2.0 / std::f64::consts::PI).sqrt() - 0.25).abs() < 1e-12);
        }
        assert_eq!(NoiseSpec::uniform_matching(0.25), NoiseSpec::Uniform { half_width_ratio: 0.5 });
    }

    #[test]
    fn config_validation() {
        let mut g = GuidanceConfig {
            d_max_ratio: 1.0,
            mppi: MppiConfig::dubins(1.0),
            per_step_resample: true,
            warm_start: true,
            seed: 0,
        };
        assert!(g.validate().is_err());
        g.d_max_ratio = 0.7;
        assert!(g.validate().is_ok());
    }
}
