//! Rollouts, the predictive safety filter and the method-comparison
//! experiments.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Status};
use crate::dynamics::{Dynamics, Model, State};
use crate::error::{Error, Result};
use crate::expert::Controller;
use crate::guidance::{self, GuidanceConfig, Injection, NoiseSpec};
use crate::mppi::{self, MppiConfig};
use crate::policy::{self, MlpPolicy, TrainConfig, TrainReport};
use crate::scenario::Scenario;
use crate::seed;
use crate::world::World;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub trajectory: Vec<State>,
    pub actions: Vec<Vec<f64>>,
    pub status: Status,
    /// `min_t l(x_t)`; at most zero for collisions.
    pub min_clearance: f64,
    pub filter_interventions: usize,
    /// Filter steps where the backup solver failed and the nominal action was kept.
    pub filter_degraded: usize,
    /// The simulation produced a non-finite state (counted as a collision).
    pub diverged: bool,
}

impl RolloutResult {
    pub fn steps(&self) -> usize {
        self.actions.len()
    }
}

/// How the filter forecasts the closed loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterPrediction {
    /// Re-query the nominal controller at every predicted state.
    PolicyInLoop,
    /// Hold the current nominal action over the whole horizon.
    HoldConstant,
}

/// Predictive safety filter: forecasts `horizon` steps under the nominal
/// controller and, if the forecast collides, substitutes the first input of
/// a safety-maximizing MPPI solve over the full input bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyFilter {
    pub horizon: usize,
    pub backup: MppiConfig,
    pub prediction: FilterPrediction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterDecision {
    pub action: Vec<f64>,
    pub intervened: bool,
    pub degraded: bool,
}

impl SafetyFilter {
    /// Quadrotor defaults: 50-step forecast, MPPI backup with `H = 30`.
    pub fn quad4d(model: &Model) -> Self {
        Self {
            horizon: 50,
            backup: MppiConfig::quad4d(0.0).with_bound(model.control_bound().to_vec()),
            prediction: FilterPrediction::PolicyInLoop,
        }
    }

    pub fn dubins(model: &Model) -> Self {
        Self {
            horizon: 50,
            backup: MppiConfig::dubins(0.0).with_bound(model.control_bound().to_vec()),
            prediction: FilterPrediction::PolicyInLoop,
        }
    }

    /// Whether the forecast from `x` starting with `nominal` enters the failure set.
    pub fn predicts_collision(
        &self,
        model: &Model,
        world: &World,
        x: &[f64],
        nominal: &[f64],
        controller: Option<&dyn Controller>,
    ) -> bool {
        let mut cur = x.to_vec();
        let mut next = cur.clone();
        let mut u = nominal.to_vec();
        for k in 0..self.horizon {
            if k > 0 && self.prediction == FilterPrediction::PolicyInLoop {
                if let Some(c) = controller {
                    u = c.act(world, &cur);
                    model.clamp_control(&mut u);
                }
            }
            model.step_into(&cur, &u, &mut next);
            std::mem::swap(&mut cur, &mut next);
            if cur.iter().any(|v| !v.is_finite()) || world.is_collision(model.position(&cur)) {
                return true;
            }
            if world.is_at_goal(model.position(&cur)) {
                return false;
            }
        }
        false
    }

    pub fn filter(
        &self,
        model: &Model,
        world: &World,
        x: &[f64],
        nominal: &[f64],
        controller: Option<&dyn Controller>,
        seed: u64,
    ) -> FilterDecision {
        if self.horizon == 0 || !self.predicts_collision(model, world, x, nominal, controller) {
            return FilterDecision { action: nominal.to_vec(), intervened: false, degraded: false };
        }
        let cfg = self.backup.clone().with_bound(model.control_bound().to_vec()).with_seed(seed);
        match mppi::solve(model, world, &State(x.to_vec()), &cfg, None) {
            Ok(r) => FilterDecision { action: mppi::extract_first_input(&r).0, intervened: true, degraded: false },
            Err(e) => {
                log::warn!("safety filter degraded: {e}");
                FilterDecision { action: nominal.to_vec(), intervened: false, degraded: true }
            }
        }
    }
}

/// Runs `controller` from `x0` until goal, collision or `max_steps`.
pub fn rollout_policy(
    model: &Model,
    world: &World,
    controller: &dyn Controller,
    x0: &State,
    max_steps: usize,
    filter: Option<(&SafetyFilter, u64)>,
) -> Result<RolloutResult> {
    if x0.len() != model.state_dim() {
        return Err(Error::Contract("state dimension mismatch".into()));
    }
    let l0 = world.signed_distance(model.position(x0));
    if l0 <= 0.0 {
        return Err(Error::Precondition("rollout must start outside obstacles".into()));
    }
    let mut trajectory = vec![x0.clone()];
    let mut actions = Vec::new();
    let mut min_clearance = l0;
    let mut status = Status::Timeout;
    let (mut interventions, mut degraded, mut diverged) = (0, 0, false);
    let mut x = x0.to_vec();
    let mut next = x.clone();
    if world.is_at_goal(model.position(&x)) {
        status = Status::Goal;
    }
    for t in 0..max_steps {
        if status == Status::Goal {
            break;
        }
        let mut a = controller.act(world, &x);
        if let Some((f, root)) = filter {
            let d = f.filter(model, world, &x, &a, Some(controller), seed::derive_indexed(root, "filter", t as u64));
            interventions += d.intervened as usize;
            degraded += d.degraded as usize;
            a = d.action;
        }
        model.clamp_control(&mut a);
        model.step_into(&x, &a, &mut next);
        actions.push(a);
        if next.iter().any(|v| !v.is_finite()) {
            diverged = true;
            status = Status::Collision;
            min_clearance = min_clearance.min(0.0);
            break;
        }
        std::mem::swap(&mut x, &mut next);
        trajectory.push(State(x.clone()));
        let p = model.position(&x);
        let l = world.signed_distance(p);
        min_clearance = min_clearance.min(l);
        if l <= 0.0 {
            status = Status::Collision;
            break;
        }
        if world.is_at_goal(p) {
            status = Status::Goal;
        }
    }
    Ok(RolloutResult {
        trajectory,
        actions,
        status,
        min_clearance,
        filter_interventions: interventions,
        filter_degraded: degraded,
        diverged,
    })
}

/// Demonstration-collection scheme compared in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    /// Plain behavior cloning.
    Bc,
    /// Adversarially guided collection with `d̄_max = ratio·ū`.
    SafeGil { d_max_ratio: f64 },
    /// Gaussian noise with `E|d| = mean_abs_ratio·ū`.
    GaussianNoise { mean_abs_ratio: f64 },
    /// Uniform noise with `E|d| = mean_abs_ratio·ū`.
    UniformNoise { mean_abs_ratio: f64 },
}

impl Method {
    pub fn label(&self) -> String {
        match *self {
            Method::Bc => "bc".into(),
            Method::SafeGil { d_max_ratio } => format!("safegil_{d_max_ratio}"),
            Method::GaussianNoise { mean_abs_ratio } => format!("gaussian_{mean_abs_ratio}"),
            Method::UniformNoise { mean_abs_ratio } => format!("uniform_{mean_abs_ratio}"),
        }
    }

    /// Expected `|d|/ū` of the adversarial arm: the bang-bang magnitude is
    /// `d̄ = r·ū` with `r ~ U(0, d̄_max/ū)`.
    pub fn matched_mean_abs_ratio(d_max_ratio: f64) -> f64 {
        0.5 * d_max_ratio
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub method: Method,
    #[serde(default)]
    pub filtered: bool,
}

impl Condition {
    pub fn new(method: Method, filtered: bool) -> Self {
        Self { method, filtered }
    }

    pub fn label(&self) -> String {
        if self.filtered {
            format!("{}+filter", self.method.label())
        } else {
            self.method.label()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub scenario: Scenario,
    pub conditions: Vec<Condition>,
    pub demo_counts: Vec<usize>,
    pub seeds: Vec<u64>,
    pub n_eval: usize,
    pub train: TrainConfig,
    /// Solver for the adversarial arms; the bound is set per step.
    pub mppi: MppiConfig,
    #[serde(default = "default_true")]
    pub per_step_resample: bool,
    pub filter: SafetyFilter,
    /// Rollout budget as a multiple of the expert's median steps to goal.
    pub timeout_factor: f64,
    pub eval_seed: u64,
}

fn default_true() -> bool {
    true
}

impl ExperimentSpec {
    /// BC vs. adversarial collection on the Dubins corridor, at desk scale.
    pub fn dubins_default(conditions: Vec<Condition>) -> Self {
        let scenario = Scenario::dubins_corridor();
        let filter = SafetyFilter::dubins(&scenario.model);
        Self {
            scenario,
            conditions,
            demo_counts: vec![40],
            seeds: (0..5).collect(),
            n_eval: 20,
            train: TrainConfig::default(),
            mppi: MppiConfig::dubins(0.0),
            per_step_resample: true,
            filter,
            timeout_factor: 3.0,
            eval_seed: 1_000_003,
        }
    }

    pub fn quad_default(conditions: Vec<Condition>) -> Self {
        let scenario = Scenario::quad_forest(0);
        let filter = SafetyFilter::quad4d(&scenario.model);
        Self {
            scenario,
            conditions,
            demo_counts: vec![40],
            seeds: (0..5).collect(),
            n_eval: 20,
            train: TrainConfig::default(),
            mppi: MppiConfig::quad4d(0.0),
            per_step_resample: true,
            filter,
            timeout_factor: 3.0,
            eval_seed: 1_000_003,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut gaps = Vec::new();
        if self.conditions.is_empty() {
            gaps.push("conditions");
        }
        if self.demo_counts.is_empty() || self.demo_counts.contains(&0) {
            gaps.push("demo_counts");
        }
        if self.seeds.is_empty() {
            gaps.push("seeds");
        }
        if self.n_eval == 0 {
            gaps.push("n_eval");
        }
        if !(self.timeout_factor > 0.0) {
            gaps.push("timeout_factor");
        }
        if !gaps.is_empty() {
            return Err(Error::Config(format!("experiment is missing or has invalid: {}", gaps.join(", "))));
        }
        self.scenario.validate()?;
        self.train.validate()?;
        for c in &self.conditions {
            self.injection(&c.method, 0)?.validate()?;
        }
        Ok(())
    }

    /// Held-out cases and rollout budget for training seed `s`. The budget is
    /// `timeout_factor` times the expert's median steps to goal on the cases.
    pub fn seed_eval(&self, s: u64) -> Result<SeedEval> {
        let scenario = &self.scenario;
        let root = seed::derive_indexed(seed::derive(self.eval_seed, "eval"), "seed", s);
        let cases = eval_cases(scenario, root, self.n_eval)?;
        let long = (scenario.demo_length as f64 * self.timeout_factor).ceil() as usize;
        let median = expert_median_steps(scenario, &cases, long, scenario.demo_length)?;
        let max_steps = (self.timeout_factor * median as f64).ceil() as usize;
        Ok(SeedEval { root, cases, max_steps })
    }

    pub fn injection(&self, method: &Method, seed: u64) -> Result<Injection> {
        Ok(match *method {
            Method::Bc => Injection::Plain { seed },
            Method::SafeGil { d_max_ratio } => Injection::Adversarial(GuidanceConfig {
                d_max_ratio,
                mppi: self.mppi.clone(),
                per_step_resample: self.per_step_resample,
                warm_start: true,
                seed,
            }),
            Method::GaussianNoise { mean_abs_ratio } => {
                Injection::Noise { noise: NoiseSpec::gaussian_matching(mean_abs_ratio), seed }
            }
            Method::UniformNoise { mean_abs_ratio } => {
                Injection::Noise { noise: NoiseSpec::uniform_matching(mean_abs_ratio), seed }
            }
        })
    }
}

/// Evaluation setup shared by every condition of one training seed.
#[derive(Debug, Clone)]
pub struct SeedEval {
    pub root: u64,
    pub cases: Vec<(World, EvalCase)>,
    pub max_steps: usize,
}

impl SeedEval {
    pub fn run(
        &self,
        spec: &ExperimentSpec,
        controller: &dyn Controller,
        filtered: bool,
    ) -> Result<Vec<RolloutResult>> {
        let filter = filtered.then(|| (&spec.filter, seed::derive(self.root, "filter")));
        evaluate(&spec.scenario, controller, &self.cases, self.max_steps, filter)
    }
}

/// One held-out evaluation episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCase {
    pub world_index: u64,
    pub start: State,
}

/// Held-out starts (and, for generated worlds, held-out worlds) for `seed`.
pub fn eval_cases(scenario: &Scenario, seed: u64, n: usize) -> Result<Vec<(World, EvalCase)>> {
    let source = scenario.worlds.held_out(seed::derive(seed, "eval-worlds"));
    (0..n as u64)
        .map(|i| {
            let world = source.world_for(i)?;
            let mut rng = seed::stream_rng(seed::derive_indexed(seed, "eval-start", i), 0);
            let start = scenario.start.sample(&mut rng, &world)?;
            Ok((world, EvalCase { world_index: i, start }))
        })
        .collect()
}

/// Median steps-to-goal of the expert over `cases`, or `fallback` if it never succeeds.
pub fn expert_median_steps(
    scenario: &Scenario,
    cases: &[(World, EvalCase)],
    budget: usize,
    fallback: usize,
) -> Result<usize> {
    let results = cases
        .par_iter()
        .map(|(w, c)| rollout_policy(&scenario.model, w, &scenario.expert, &c.start, budget, None))
        .collect::<Result<Vec<_>>>()?;
    let mut steps: Vec<usize> = results.iter().filter(|r| r.status == Status::Goal).map(|r| r.steps()).collect();
    if steps.is_empty() {
        return Ok(fallback);
    }
    steps.sort_unstable();
    Ok(steps[steps.len() / 2])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation across seeds (zero for a single seed).
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

/// Outcome rates of one batch of rollouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutSummary {
    pub rollouts: usize,
    pub collision_rate: f64,
    pub success_rate: f64,
    pub timeout_rate: f64,
    pub mean_min_clearance: f64,
    /// Mean over successful rollouts; `None` without successes.
    pub mean_steps_to_goal: Option<f64>,
    pub filter_interventions: usize,
}

impl RolloutSummary {
    pub fn of(results: &[RolloutResult]) -> Self {
        let n = results.len() as f64;
        let count = |s: Status| results.iter().filter(|r| r.status == s).count() as f64 / n;
        let goal_steps: Vec<f64> =
            results.iter().filter(|r| r.status == Status::Goal).map(|r| r.steps() as f64).collect();
        Self {
            rollouts: results.len(),
            collision_rate: count(Status::Collision),
            success_rate: count(Status::Goal),
            timeout_rate: count(Status::Timeout),
            mean_min_clearance: results.iter().map(|r| r.min_clearance).sum::<f64>() / n,
            mean_steps_to_goal: (!goal_steps.is_empty())
                .then(|| goal_steps.iter().sum::<f64>() / goal_steps.len() as f64),
            filter_interventions: results.iter().map(|r| r.filter_interventions).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedStats {
    pub seed: u64,
    #[serde(flatten)]
    pub summary: RolloutSummary,
    pub train: TrainReport,
    pub demo_records: usize,
    pub demo_collisions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub label: String,
    pub condition: Condition,
    pub num_demos: usize,
    pub per_seed: Vec<SeedStats>,
    pub collision_rate: MeanStd,
    pub success_rate: MeanStd,
    pub timeout_rate: MeanStd,
    pub mean_min_clearance: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRow {
    pub condition: String,
    pub num_demos: usize,
    pub seed: u64,
    pub rollout: usize,
    pub world_index: u64,
    pub status: Status,
    pub steps: usize,
    pub min_clearance: f64,
    pub filter_interventions: usize,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config_fingerprint: String,
    pub code_version: String,
    pub conditions: Vec<ConditionReport>,
    /// Rollout budget used for each training seed.
    pub max_steps: Vec<usize>,
    #[serde(skip)]
    pub rows: Vec<RolloutRow>,
}

impl ExperimentReport {
    pub fn condition(&self, label: &str) -> Option<&ConditionReport> {
        self.conditions.iter().find(|c| c.label == label)
    }

    pub fn write_rows_csv<W: Write>(&self, w: W) -> Result<()> {
        write_rollout_rows(&self.rows, w)
    }
}

/// Flat per-rollout CSV for external plotting.
pub fn write_rollout_rows<W: Write>(rows: &[RolloutRow], w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record([
        "condition",
        "num_demos",
        "seed",
        "rollout",
        "world_index",
        "status",
        "steps",
        "min_clearance",
        "filter_interventions",
        "diverged",
    ])?;
    for r in rows {
        w.write_record([
            r.condition.clone(),
            r.num_demos.to_string(),
            r.seed.to_string(),
            r.rollout.to_string(),
            r.world_index.to_string(),
            r.status.as_str().to_string(),
            r.steps.to_string(),
            format!("{:?}", r.min_clearance),
            r.filter_interventions.to_string(),
            r.diverged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Collects demonstrations for `method` with the experiment's seed hierarchy.
/// Every method shares the per-seed collection root, so demonstration `k`
/// starts from the same state in every arm.
pub fn collect_for(spec: &ExperimentSpec, method: &Method, num_demos: usize, seed: u64) -> Result<Dataset> {
    let injection = spec.injection(method, seed::derive(seed, "collect"))?;
    guidance::collect_with(&spec.scenario, &spec.scenario.expert, &injection, num_demos, spec.scenario.demo_length)
}

/// Runs a rollout batch and returns the results in case order.
pub fn evaluate(
    scenario: &Scenario,
    controller: &dyn Controller,
    cases: &[(World, EvalCase)],
    max_steps: usize,
    filter: Option<(&SafetyFilter, u64)>,
) -> Result<Vec<RolloutResult>> {
    cases
        .par_iter()
        .enumerate()
        .map(|(i, (w, c))| {
            let f = filter.map(|(f, s)| (f, seed::derive_indexed(s, "rollout", i as u64)));
            rollout_policy(&scenario.model, w, controller, &c.start, max_steps, f)
        })
        .collect()
}

fn stats(seed: u64, results: &[RolloutResult], train: TrainReport, data: &Dataset) -> SeedStats {
    SeedStats {
        seed,
        summary: RolloutSummary::of(results),
        train,
        demo_records: data.num_records(),
        demo_collisions: data.demos.iter().filter(|d| d.terminal_status == Status::Collision).count(),
    }
}

/// Collect, train and evaluate every condition for every seed and demo count.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let scenario = &spec.scenario;
    let mut trained: HashMap<(String, usize, u64), (MlpPolicy, TrainReport, Dataset)> = HashMap::new();
    let mut per_condition: Vec<(Condition, usize, Vec<SeedStats>)> = Vec::new();
    let mut rows = Vec::new();
    let mut budgets = Vec::new();

    let mut cases_by_seed = HashMap::new();
    for &s in &spec.seeds {
        let plan = spec.seed_eval(s)?;
        budgets.push(plan.max_steps);
        cases_by_seed.insert(s, plan);
    }

    for &num_demos in &spec.demo_counts {
        for cond in &spec.conditions {
            let mut seed_stats = Vec::new();
            for &s in &spec.seeds {
                let key = (cond.method.label(), num_demos, s);
                if !trained.contains_key(&key) {
                    let data = collect_for(spec, &cond.method, num_demos, s)?;
                    let cfg = TrainConfig { seed: seed::derive(s, "train"), ..spec.train.clone() };
                    let (p, report) = policy::train(&data, scenario, &cfg)?;
                    log::info!(
                        "trained {} demos={num_demos} seed={s}: loss {:.3e}, {} records",
                        cond.method.label(),
                        report.train_loss.last().copied().unwrap_or(f64::NAN),
                        data.num_records()
                    );
                    trained.insert(key.clone(), (p, report, data));
                }
                let (p, report, data) = &trained[&key];
                let plan = &cases_by_seed[&s];
                let results = plan.run(spec, p, cond.filtered)?;
                for (i, (r, (_, c))) in results.iter().zip(&plan.cases).enumerate() {
                    rows.push(RolloutRow {
                        condition: cond.label(),
                        num_demos,
                        seed: s,
                        rollout: i,
                        world_index: c.world_index,
                        status: r.status,
                        steps: r.steps(),
                        min_clearance: r.min_clearance,
                        filter_interventions: r.filter_interventions,
                        diverged: r.diverged,
                    });
                }
                seed_stats.push(stats(s, &results, report.clone(), data));
            }
            per_condition.push((cond.clone(), num_demos, seed_stats));
        }
    }

    let conditions = per_condition
        .into_iter()
        .map(|(condition, num_demos, per_seed)| {
            let col = |f: fn(&RolloutSummary) -> f64| {
                MeanStd::of(&per_seed.iter().map(|s| f(&s.summary)).collect::<Vec<_>>())
            };
            let label = if spec.demo_counts.len() > 1 {
                format!("{}@{num_demos}", condition.label())
            } else {
                condition.label()
            };
            ConditionReport {
                label,
                num_demos,
                collision_rate: col(|s| s.collision_rate),
                success_rate: col(|s| s.success_rate),
                timeout_rate: col(|s| s.timeout_rate),
                mean_min_clearance: col(|s| s.mean_min_clearance),
                condition,
                per_seed,
            }
        })
        .collect();

    Ok(ExperimentReport {
        config_fingerprint: crate::fingerprint(spec),
        code_version: crate::VERSION.into(),
        conditions,
        max_steps: budgets,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Dubins;
    use crate::expert::ConstantController;
    use crate::world::{Bounds, Circle, Goal};

    fn open_world() -> World {
        World::new(vec![], Goal::Disk { x: 5.0, y: 0.0, r: 0.5 }, Bounds::new(-1.0, 10.0, -5.0, 5.0)).unwrap()
    }

    fn dubins() -> Model {
        Model::Dubins(Dubins::default())
    }

    #[test]
    fn expert_reaches_goal_in_open_world() {
        let s = Scenario::dubins_corridor();
        let r = rollout_policy(&dubins(), &open_world(), &s.expert, &State(vec![0.0, 1.0, 0.0]), 200, None).unwrap();
        assert_eq!(r.status, Status::Goal);
        assert!(r.min_clearance > 0.0);
    }

    #[test]
    fn straight_into_obstacle_collides_on_schedule() {
        // Obstacle edge at x = 1.0; driving at 0.1 m per step from x = 0.55
        // the car first reaches l <= 0 at step 5 (x = 1.05, since x = 1.0 is
        // reached only up to rounding).
        let w = World::new(vec![Circle::new(1.5, 0.0, 0.5)], Goal::Line { x: 9.0 }, Bounds::new(-1.0, 10.0, -5.0, 5.0))
            .unwrap();
        let r = rollout_policy(&dubins(), &w, &ConstantController(vec![0.0]), &State(vec![0.55, 0.0, 0.0]), 100, None)
            .unwrap();
        assert_eq!(r.status, Status::Collision);
        let k = r.steps();
        assert!((4..=5).contains(&k), "collided at step {k}");
        assert!(r.min_clearance <= 0.0);
    }

    #[test]
    fn zero_budget_times_out() {
        let x0 = State(vec![0.0, 0.0, 0.0]);
        let r = rollout_policy(&dubins(), &open_world(), &ConstantController(vec![0.0]), &x0, 0, None).unwrap();
        assert_eq!(r.status, Status::Timeout);
        assert_eq!(r.trajectory, vec![x0]);
    }

    #[test]
    fn start_in_obstacle_is_rejected() {
        let w = World::new(vec![Circle::new(0.0, 0.0, 1.0)], Goal::Line { x: 9.0 }, Bounds::new(-1.0, 10.0, -5.0, 5.0))
            .unwrap();
        let r = rollout_policy(&dubins(), &w, &ConstantController(vec![0.0]), &State(vec![0.0, 0.0, 0.0]), 10, None);
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn filter_passes_through_in_open_space_and_intervenes_ahead_of_obstacles() {
        let m = dubins();
        let f = SafetyFilter::dubins(&m);
        let d = f.filter(&m, &open_world(), &[0.0, 0.0, 0.0], &[0.0], None, 1);
        assert!(!d.intervened && d.action == vec![0.0]);
        // Obstacle 2 m ahead, well inside a 50 × 0.1 m forecast.
        let w = World::new(vec![Circle::new(3.0, 0.0, 1.0)], Goal::Line { x: 9.0 }, Bounds::new(-1.0, 10.0, -5.0, 5.0))
            .unwrap();
        let d = f.filter(&m, &w, &[0.0, 0.0, 0.0], &[0.0], None, 1);
        assert!(d.intervened);
        let zero = SafetyFilter { horizon: 0, ..f };
        assert!(!zero.filter(&m, &w, &[0.0, 0.0, 0.0], &[0.0], None, 1).intervened);
    }

    #[test]
    fn filtered_rollout_without_obstacles_matches_unfiltered() {
        let m = dubins();
        let s = Scenario::dubins_corridor();
        let f = SafetyFilter::dubins(&m);
        let x0 = State(vec![0.0, -1.0, 0.3]);
        let a = rollout_policy(&m, &open_world(), &s.expert, &x0, 150, None).unwrap();
        let b = rollout_policy(&m, &open_world(), &s.expert, &x0, 150, Some((&f, 4))).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn filter_prevents_head_on_collision() {
        let m = dubins();
        let w = World::new(vec![Circle::new(3.0, 0.0, 1.0)], Goal::Line { x: 9.0 }, Bounds::new(-1.0, 10.0, -5.0, 5.0))
            .unwrap();
        let f = SafetyFilter::dubins(&m);
        let straight = ConstantController(vec![0.0]);
        let x0 = State(vec![0.0, 0.0, 0.0]);
        assert_eq!(rollout_policy(&m, &w, &straight, &x0, 60, None).unwrap().status, Status::Collision);
        let r = rollout_policy(&m, &w, &straight, &x0, 60, Some((&f, 2))).unwrap();
        assert_ne!(r.status, Status::Collision);
        assert!(r.filter_interventions > 0);
    }

    #[test]
    fn matched_energy_ratio() {
        assert_eq!(Method::matched_mean_abs_ratio(0.5), 0.25);
    }

    #[test]
    fn tiny_experiment_is_deterministic_and_consistent() {
        let mut spec = ExperimentSpec::dubins_default(vec![
            Condition::new(Method::Bc, false),
            Condition::new(Method::SafeGil { d_max_ratio: 0.5 }, false),
        ]);
        spec.demo_counts = vec![2];
        spec.seeds = vec![7];
        spec.n_eval = 1;
        spec.train.epochs = 2;
        spec.mppi.num_samples = 50;
        let a = run_experiment(&spec).unwrap();
        let b = run_experiment(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.conditions.len(), 2);
        for c in &a.conditions {
            let s = &c.per_seed[0];
            assert!((s.summary.collision_rate + s.summary.success_rate + s.summary.timeout_rate - 1.0).abs() < 1e-12);
        }
        for r in &a.rows {
            assert_eq!(r.status == Status::Collision, r.min_clearance <= 0.0);
        }
        let mut empty = spec.clone();
        empty.seeds.clear();
        assert!(matches!(run_experiment(&empty), Err(Error::Config(_))));
    }
}
