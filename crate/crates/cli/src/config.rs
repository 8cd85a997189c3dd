//! JSON run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mpcguide::eval::{Condition, ExperimentSpec, Method, SafetyFilter};
use mpcguide::oracle::{GridSpec, ReductionInstance};
use mpcguide::policy::TrainConfig;
use mpcguide::scenario::{verification_world, Scenario, WorldSource};
use mpcguide::world::GenerationSpec;
use mpcguide::{Model, MppiConfig, World};

use crate::error::{CliError, CliResult};

/// A built-in scenario by name, or a complete inline definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioChoice {
    Preset(String),
    Inline(Box<Scenario>),
}

impl Default for ScenarioChoice {
    fn default() -> Self {
        ScenarioChoice::Preset("dubins_corridor".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectConfig {
    pub method: Method,
    pub num_demos: usize,
    /// Draw a fresh bound every step instead of using the maximum throughout.
    pub per_step_resample: bool,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self { method: Method::SafeGil { d_max_ratio: 0.5 }, num_demos: 40, per_step_resample: true }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Wrap the policy in the predictive safety filter.
    pub filtered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub conditions: Vec<Condition>,
    pub demo_counts: Vec<usize>,
    pub seeds: Vec<u64>,
    pub n_eval: usize,
    pub timeout_factor: f64,
    pub eval_seed: u64,
    /// Defaults to the model's filter settings when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filter: Option<SafetyFilter>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let base = ExperimentSpec::dubins_default(vec![]);
        Self {
            conditions: vec![
                Condition::new(Method::Bc, false),
                Condition::new(Method::SafeGil { d_max_ratio: 0.5 }, false),
            ],
            demo_counts: base.demo_counts,
            seeds: base.seeds,
            n_eval: base.n_eval,
            timeout_factor: base.timeout_factor,
            eval_seed: base.eval_seed,
            filter: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// Nodes per grid axis.
    pub grid_n: usize,
    pub samples: usize,
    /// `d̄ / ū`.
    pub d_bar_ratio: f64,
    /// Compare the oracle against itself instead of the sampled solver.
    pub self_compare: bool,
    /// Grid override; the verification grid of size `grid_n` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    /// World override; the two-obstacle verification world when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub world: Option<World>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { grid_n: 51, samples: 10_000, d_bar_ratio: 0.5, self_compare: false, grid: None, world: None }
    }
}

impl VerifyConfig {
    pub fn grid_spec(&self) -> GridSpec {
        self.grid.clone().unwrap_or_else(|| GridSpec::verification(self.grid_n))
    }

    pub fn world(&self) -> World {
        self.world.clone().unwrap_or_else(verification_world)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReductionConfig {
    /// Random instances drawn from seeds `first_seed..first_seed + random_instances`.
    pub random_instances: u64,
    pub first_seed: u64,
    /// Explicit instances checked after the random ones.
    pub instances: Vec<ReductionInstance>,
    pub tolerance: f64,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        Self { random_instances: 50, first_seed: 0, instances: vec![], tolerance: 1e-9 }
    }
}

/// Input artifact locations; default to files inside the output directory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<PathBuf>,
    /// Replaces the scenario's worlds with this fixed world file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub world: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of the seed hierarchy.
    pub seed: u64,
    pub out: PathBuf,
    pub scenario: ScenarioChoice,
    /// Solver for adversarial collection; the model's defaults when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mppi: Option<MppiConfig>,
    pub collect: CollectConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub experiment: ExperimentConfig,
    pub verify: VerifyConfig,
    pub reduction: ReductionConfig,
    /// Generator for `gen-world`; the quadrotor field when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub world_generator: Option<GenerationSpec>,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            scenario: ScenarioChoice::default(),
            mppi: None,
            collect: CollectConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            experiment: ExperimentConfig::default(),
            verify: VerifyConfig::default(),
            reduction: ReductionConfig::default(),
            world_generator: None,
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    /// Parses JSON, naming the offending field path on failure.
    pub fn from_json(text: &str) -> CliResult<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let at = e.path().to_string();
            CliError::config(if at == "." { "<root>".into() } else { at }, e.into_inner().to_string())
        })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::MissingArtifact { path: path.to_path_buf(), reason: e.to_string() })?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config { at, message } => CliError::config(format!("{}: {at}", path.display()), message),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run config serializes")
    }

    /// Hash of everything that influences artifact contents. The output
    /// directory is excluded so the same run in two places fingerprints equally.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        mpcguide::fingerprint(&c)
    }

    /// The scenario with any world-file override applied.
    pub fn scenario(&self) -> CliResult<Scenario> {
        let mut s = match &self.scenario {
            ScenarioChoice::Preset(name) => {
                Scenario::by_name(name).map_err(|e| CliError::config("scenario", e.to_string()))?
            }
            ScenarioChoice::Inline(s) => (**s).clone(),
        };
        if let Some(path) = &self.paths.world {
            let world: World = read_json(path)?;
            world.validate().map_err(|e| CliError::from_core("paths.world", e))?;
            s.worlds = WorldSource::Fixed { world };
        }
        s.validate().map_err(|e| CliError::from_core("scenario", e))?;
        Ok(s)
    }

    pub fn mppi_for(&self, model: &Model) -> MppiConfig {
        self.mppi.clone().unwrap_or_else(|| match model {
            Model::Dubins(_) => MppiConfig::dubins(0.0),
            Model::Quad4d(_) => MppiConfig::quad4d(0.0),
        })
    }

    /// Experiment description assembled from the shared sections.
    pub fn experiment_spec(&self) -> CliResult<ExperimentSpec> {
        let scenario = self.scenario()?;
        let filter = self.experiment.filter.clone().unwrap_or_else(|| match scenario.model {
            Model::Dubins(_) => SafetyFilter::dubins(&scenario.model),
            Model::Quad4d(_) => SafetyFilter::quad4d(&scenario.model),
        });
        let e = &self.experiment;
        Ok(ExperimentSpec {
            mppi: self.mppi_for(&scenario.model),
            scenario,
            conditions: e.conditions.clone(),
            demo_counts: e.demo_counts.clone(),
            seeds: e.seeds.clone(),
            n_eval: e.n_eval,
            train: self.train.clone(),
            per_step_resample: self.collect.per_step_resample,
            filter,
            timeout_factor: e.timeout_factor,
            eval_seed: e.eval_seed,
        })
    }

    /// Checks every section against its module's invariants.
    pub fn validate(&self) -> CliResult<()> {
        let spec = self.experiment_spec()?;
        let at = |section: &'static str| move |e| CliError::from_core(section, e);
        self.train.validate().map_err(at("train"))?;
        if let Some(m) = &self.mppi {
            let mut probe = m.clone();
            probe.input_bound = vec![1.0; probe.input_bound.len().max(1)];
            probe.validate().map_err(at("mppi"))?;
        }
        if self.collect.num_demos == 0 {
            return Err(CliError::config("collect.num_demos", "must be at least 1"));
        }
        spec.injection(&self.collect.method, 0).and_then(|i| i.validate()).map_err(at("collect.method"))?;
        if spec.n_eval == 0 {
            return Err(CliError::config("experiment.n_eval", "must be at least 1"));
        }
        if !(spec.timeout_factor > 0.0) {
            return Err(CliError::config("experiment.timeout_factor", "must be positive"));
        }
        for c in &spec.conditions {
            spec.injection(&c.method, 0).and_then(|i| i.validate()).map_err(at("experiment.conditions"))?;
        }
        let v = &self.verify;
        v.grid_spec().validate().map_err(at("verify.grid"))?;
        if !(0.0..1.0).contains(&v.d_bar_ratio) {
            return Err(CliError::config("verify.d_bar_ratio", "must lie in [0, 1)"));
        }
        if v.samples == 0 {
            return Err(CliError::config("verify.samples", "must be at least 1"));
        }
        v.world().validate().map_err(at("verify.world"))?;
        if !(self.reduction.tolerance >= 0.0) {
            return Err(CliError::config("reduction.tolerance", "must be non-negative"));
        }
        if let Some(g) = &self.world_generator {
            g.validate().map_err(at("world_generator"))?;
        }
        Ok(())
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.paths.dataset.clone().unwrap_or_else(|| self.out.join(crate::commands::DATASET_FILE))
    }

    pub fn policy_path(&self) -> PathBuf {
        self.paths.policy.clone().unwrap_or_else(|| self.out.join(crate::commands::POLICY_FILE))
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::MissingArtifact { path: path.to_path_buf(), reason: e.to_string() })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de)
        .map_err(|e| CliError::config(format!("{}: {}", path.display(), e.path()), e.into_inner().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_field_names_its_path() {
        let err = RunConfig::from_json(r#"{"collect": {"num_demo": 3}}"#).unwrap_err();
        match err {
            CliError::Config { at, message } => {
                assert_eq!(at, "collect.num_demo");
                assert!(message.contains("unknown field"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_type_names_its_path() {
        let err = RunConfig::from_json(r#"{"train": {"epochs": "many"}}"#).unwrap_err();
        assert!(matches!(err, CliError::Config { ref at, .. } if at == "train.epochs"), "{err:?}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn invariant_violations_name_the_section() {
        let mut c = RunConfig::default();
        c.train.batch_size = 0;
        assert!(matches!(c.validate(), Err(CliError::Config { ref at, .. }) if at == "train"));
        let mut c = RunConfig::default();
        c.collect.method = Method::SafeGil { d_max_ratio: 1.0 };
        assert!(matches!(c.validate(), Err(CliError::Config { ref at, .. }) if at == "collect.method"));
        let c = RunConfig { scenario: ScenarioChoice::Preset("moon".into()), ..RunConfig::default() };
        assert!(matches!(c.validate(), Err(CliError::Config { ref at, .. }) if at == "scenario"));
    }

    #[test]
    fn fingerprint_ignores_output_directory() {
        let a = RunConfig::default();
        let b = RunConfig { out: "elsewhere".into(), ..a.clone() };
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = RunConfig { seed: 1, ..a.clone() };
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn inline_scenario_round_trips() {
        let c =
            RunConfig { scenario: ScenarioChoice::Inline(Box::new(Scenario::quad_forest(4))), ..RunConfig::default() };
        let back = RunConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.scenario().unwrap(), Scenario::quad_forest(4));
    }
}
