//! Subcommand implementations. Each command reads its inputs, writes its
//! artifacts under the output directory and returns a one-line summary.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use mpcguide::dataset::{Dataset, Manifest};
use mpcguide::eval::{self, write_rollout_rows, ExperimentReport, RolloutRow, RolloutSummary};
use mpcguide::guidance::optimal_disturbance;
use mpcguide::oracle::{
    check_reduction, disturbance_field_mse, oracle_disturbance, value_iteration, MseReport, ReductionInstance,
    ValueGrid, GRADIENT_EPS,
};
use mpcguide::policy::{self, MlpPolicy, TrainConfig, TrainReport};
use mpcguide::world::{generate_world, GenerationSpec};
use mpcguide::{seed, Dynamics, Model, State, VERSION};

use crate::config::{read_json, RunConfig};
use crate::error::{CliError, CliResult};

pub const DATASET_FILE: &str = "dataset.csv";
pub const MANIFEST_FILE: &str = "dataset.manifest.json";
pub const POLICY_FILE: &str = "policy.mlp";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";
pub const EVAL_REPORT_FILE: &str = "eval_report.json";
pub const EVAL_ROWS_FILE: &str = "eval_rollouts.csv";
pub const EXPERIMENT_REPORT_FILE: &str = "experiment_report.json";
pub const EXPERIMENT_ROWS_FILE: &str = "experiment_rollouts.csv";
pub const VALUE_GRID_FILE: &str = "value_grid.vgrd";
pub const MSE_REPORT_FILE: &str = "mse_report.json";
pub const FIELD_SLICE_FILE: &str = "field_slice.csv";
pub const DIAGNOSTICS_FILE: &str = "mppi_diagnostics.jsonl";
pub const REDUCTION_REPORT_FILE: &str = "reduction_report.json";
pub const WORLD_FILE: &str = "world.json";

/// Which report encodings `eval` and `experiment` write.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    Json,
    Csv,
    #[default]
    Both,
}

impl ReportFormat {
    fn json(self) -> bool {
        matches!(self, ReportFormat::Json | ReportFormat::Both)
    }

    fn csv(self) -> bool {
        matches!(self, ReportFormat::Csv | ReportFormat::Both)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Options {
    /// Emit per-solve MPPI diagnostics as JSON lines.
    pub diagnostics: bool,
    pub report: ReportFormat,
}

/// What a command produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub summary: String,
    pub artifacts: Vec<PathBuf>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Core(e.into()))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(io_err(path))
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| CliError::MissingArtifact { path: path.to_path_buf(), reason: e.to_string() })
}

fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn core(at: &'static str) -> impl Fn(mpcguide::Error) -> CliError {
    move |e| CliError::from_core(at, e)
}

#[derive(Debug, Serialize)]
struct VerifyReport<'a> {
    config_fingerprint: String,
    code_version: &'a str,
    self_compare: bool,
    grid: &'a ValueGrid,
    field: &'a MseReport,
}

#[derive(Serialize)]
struct SolveDiagnostics {
    sample: usize,
    state: Vec<f64>,
    cost: f64,
    elite_costs: Vec<f64>,
    wall_seconds: f64,
}

/// Grid oracle vs sampled disturbance field on the verification world.
pub fn verify(config: &RunConfig, options: &Options) -> CliResult<Outcome> {
    config.validate()?;
    let scenario = config.scenario()?;
    let Model::Dubins(model) = &scenario.model else {
        return Err(CliError::config("scenario", "verify needs the dubins3 model"));
    };
    let v = &config.verify;
    let world = v.world();
    let d_bar = v.d_bar_ratio * model.omega_max();
    let grid = value_iteration(model, &world, &v.grid_spec(), d_bar).map_err(core("verify.grid"))?;
    log::info!("value iteration converged in {} sweeps (residual {:.2e})", grid.iterations, grid.residual);

    let mppi = config.mppi_for(&scenario.model);
    let mppi_root = seed::derive(config.seed, "verify-mppi");
    let diagnostics = Mutex::new(Vec::new());
    let sampled = |i: usize, x: &State| -> mpcguide::Result<f64> {
        if v.self_compare {
            return Ok(oracle_disturbance(&grid, x, d_bar, GRADIENT_EPS)?.value().unwrap_or(0.0));
        }
        let cfg = mppi.clone().with_seed(seed::derive_indexed(mppi_root, "sample", i as u64));
        let t = Instant::now();
        let (d, result) = optimal_disturbance(model, &world, x, &[d_bar], &cfg, None)?;
        if let (true, Some(r)) = (options.diagnostics, result) {
            let line = SolveDiagnostics {
                sample: i,
                state: x.0.clone(),
                cost: r.cost,
                elite_costs: r.elite_costs,
                wall_seconds: t.elapsed().as_secs_f64(),
            };
            diagnostics.lock().unwrap().push((i, serde_json::to_string(&line).expect("diagnostics serialize")));
        }
        Ok(d.0[0])
    };
    let report = disturbance_field_mse(
        &grid,
        &world,
        d_bar,
        v.samples,
        seed::derive(config.seed, "verify"),
        GRADIENT_EPS,
        sampled,
    )
    .map_err(core("verify"))?;

    let out = &config.out;
    let grid_path = out.join(VALUE_GRID_FILE);
    grid.write_to(create(&grid_path)?).map_err(CliError::Core)?;
    let report_path = out.join(MSE_REPORT_FILE);
    write_json(
        &report_path,
        &VerifyReport {
            config_fingerprint: config.fingerprint(),
            code_version: VERSION,
            self_compare: v.self_compare,
            grid: &grid,
            field: &report,
        },
    )?;

    // Both fields on the heading slice closest to zero. Slice solves use
    // sample indices after the comparison set.
    let slice_path = out.join(FIELD_SLICE_FILE);
    let [nx, ny, nt] = grid.shape();
    let k0 = (0..nt).min_by(|&a, &b| grid.axes[2].node(a).abs().total_cmp(&grid.axes[2].node(b).abs())).unwrap();
    let nodes: Vec<(usize, usize)> = (0..nx).flat_map(|i| (0..ny).map(move |j| (i, j))).collect();
    use rayon::prelude::*;
    let rows = nodes
        .par_iter()
        .enumerate()
        .map(|(n, &(i, j))| {
            let x = State(grid.node_state(i, j, k0).to_vec());
            let oracle = oracle_disturbance(&grid, &x, d_bar, GRADIENT_EPS)?;
            let d_mppi = sampled(v.samples + n, &x)?;
            Ok((x, d_mppi, oracle))
        })
        .collect::<mpcguide::Result<Vec<_>>>()
        .map_err(core("verify"))?;
    let mut w = create(&slice_path)?;
    let mut text = String::from("x,y,d_mppi,d_oracle,degenerate\n");
    for (x, d_mppi, oracle) in &rows {
        let d_oracle = oracle.value();
        text.push_str(&format!(
            "{:?},{:?},{:?},{:?},{}\n",
            x.0[0],
            x.0[1],
            d_mppi,
            d_oracle.unwrap_or(0.0),
            d_oracle.is_none()
        ));
    }
    w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(io_err(&slice_path))?;

    let mut artifacts = vec![grid_path, report_path, slice_path];
    if options.diagnostics {
        let mut lines = diagnostics.into_inner().unwrap();
        lines.sort_by_key(|l| l.0);
        let path = out.join(DIAGNOSTICS_FILE);
        let mut w = create(&path)?;
        for (_, l) in lines {
            writeln!(w, "{l}").map_err(io_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
        artifacts.push(path);
    }
    Ok(Outcome {
        summary: format!(
            "disturbance MSE {:.4} over {} states, sign agreement {:.3}",
            report.mse, report.num_samples, report.agreement
        ),
        artifacts,
    })
}

/// Demonstrations under the configured collection method.
pub fn collect(config: &RunConfig) -> CliResult<Outcome> {
    config.validate()?;
    let spec = config.experiment_spec()?;
    let c = &config.collect;
    let data = eval::collect_for(&spec, &c.method, c.num_demos, config.seed).map_err(core("collect"))?;
    let manifest = Manifest {
        model: spec.scenario.model.id().into(),
        scenario: spec.scenario.clone(),
        collection: serde_json::json!({
            "method": c.method,
            "per_step_resample": c.per_step_resample,
            "mppi": spec.mppi,
            "seed": config.seed,
        }),
        num_demos: data.demos.len(),
        num_records: data.num_records(),
        code_version: VERSION.into(),
        config_fingerprint: config.fingerprint(),
    };
    let path = config.dataset_path();
    data.write_csv(create(&path)?).map_err(CliError::Core)?;
    let manifest_path = manifest_path_for(&path);
    write_json(&manifest_path, &manifest)?;
    let collisions = data.demos.iter().filter(|d| d.terminal_status == mpcguide::dataset::Status::Collision).count();
    Ok(Outcome {
        summary: format!(
            "{} demonstrations, {} records, {collisions} ended in collision",
            data.demos.len(),
            data.num_records()
        ),
        artifacts: vec![path, manifest_path],
    })
}

fn manifest_path_for(dataset: &Path) -> PathBuf {
    if dataset.file_name().and_then(|n| n.to_str()) == Some(DATASET_FILE) {
        dataset.with_file_name(MANIFEST_FILE)
    } else {
        dataset.with_extension("manifest.json")
    }
}

#[derive(Debug, Serialize)]
struct TrainArtifact<'a> {
    config_fingerprint: String,
    code_version: &'a str,
    dataset_sha256: String,
    train: &'a TrainConfig,
    report: &'a TrainReport,
}

/// Behavior cloning on a collected dataset.
pub fn train(config: &RunConfig) -> CliResult<Outcome> {
    config.validate()?;
    let scenario = config.scenario()?;
    let path = config.dataset_path();
    let file = open(&path)?;
    let manifest_path = manifest_path_for(&path);
    if manifest_path.exists() {
        let manifest: Manifest = read_json(&manifest_path)?;
        if manifest.model != scenario.model.id() {
            return Err(CliError::config(
                "scenario",
                format!("dataset was collected with {} but the config uses {}", manifest.model, scenario.model.id()),
            ));
        }
    }
    let data = Dataset::read_csv(file, scenario.model.control_bound())
        .map_err(|e| CliError::config(path.display().to_string(), e.to_string()))?;
    let cfg = TrainConfig { seed: seed::derive(config.seed, "train"), ..config.train.clone() };
    let (policy, report) = policy::train(&data, &scenario, &cfg).map_err(core("train"))?;

    let policy_path = config.policy_path();
    policy.write_to(create(&policy_path)?).map_err(CliError::Core)?;
    let report_path = config.out.join(TRAIN_REPORT_FILE);
    write_json(
        &report_path,
        &TrainArtifact {
            config_fingerprint: config.fingerprint(),
            code_version: VERSION,
            dataset_sha256: sha256_file(&path)?,
            train: &cfg,
            report: &report,
        },
    )?;
    let last = |v: &[f64]| v.last().map(|l| format!("{l:.4e}")).unwrap_or_else(|| "n/a".into());
    Ok(Outcome {
        summary: format!(
            "{} epochs on {} samples: train loss {}, validation loss {}",
            report.epochs,
            report.train_samples,
            last(&report.train_loss),
            last(&report.validation_loss)
        ),
        artifacts: vec![policy_path, report_path],
    })
}

#[derive(Debug, Serialize)]
struct EvalArtifact<'a> {
    config_fingerprint: String,
    code_version: &'a str,
    policy_sha256: String,
    seed: u64,
    filtered: bool,
    max_steps: usize,
    summary: &'a RolloutSummary,
}

/// Held-out rollouts of a saved policy.
pub fn evaluate(config: &RunConfig, options: &Options) -> CliResult<Outcome> {
    config.validate()?;
    let spec = config.experiment_spec()?;
    let path = config.policy_path();
    let policy = MlpPolicy::read_expecting(open(&path)?, &spec.scenario.observation)
        .map_err(|e| CliError::config(path.display().to_string(), e.to_string()))?;
    let plan = spec.seed_eval(config.seed).map_err(core("experiment"))?;
    let filtered = config.eval.filtered;
    let results = plan.run(&spec, &policy, filtered).map_err(core("eval"))?;
    let summary = RolloutSummary::of(&results);
    let label = if filtered { "policy+filter" } else { "policy" };
    let rows: Vec<RolloutRow> = results
        .iter()
        .zip(&plan.cases)
        .enumerate()
        .map(|(i, (r, (_, c)))| RolloutRow {
            condition: label.into(),
            num_demos: 0,
            seed: config.seed,
            rollout: i,
            world_index: c.world_index,
            status: r.status,
            steps: r.steps(),
            min_clearance: r.min_clearance,
            filter_interventions: r.filter_interventions,
            diverged: r.diverged,
        })
        .collect();

    let mut artifacts = Vec::new();
    if options.report.json() {
        let p = config.out.join(EVAL_REPORT_FILE);
        write_json(
            &p,
            &EvalArtifact {
                config_fingerprint: config.fingerprint(),
                code_version: VERSION,
                policy_sha256: sha256_file(&path)?,
                seed: config.seed,
                filtered,
                max_steps: plan.max_steps,
                summary: &summary,
            },
        )?;
        artifacts.push(p);
    }
    if options.report.csv() {
        let p = config.out.join(EVAL_ROWS_FILE);
        write_rollout_rows(&rows, create(&p)?).map_err(CliError::Core)?;
        artifacts.push(p);
    }
    Ok(Outcome {
        summary: format!(
            "{} rollouts: collision {:.3}, success {:.3}, timeout {:.3}",
            summary.rollouts, summary.collision_rate, summary.success_rate, summary.timeout_rate
        ),
        artifacts,
    })
}

/// Every condition, seed and demonstration count of the experiment section.
pub fn experiment(config: &RunConfig, options: &Options) -> CliResult<Outcome> {
    config.validate()?;
    let spec = config.experiment_spec()?;
    spec.validate().map_err(core("experiment"))?;
    let mut report: ExperimentReport = eval::run_experiment(&spec).map_err(core("experiment"))?;
    report.config_fingerprint = config.fingerprint();
    let mut artifacts = Vec::new();
    if options.report.json() {
        let p = config.out.join(EXPERIMENT_REPORT_FILE);
        write_json(&p, &report)?;
        artifacts.push(p);
    }
    if options.report.csv() {
        let p = config.out.join(EXPERIMENT_ROWS_FILE);
        report.write_rows_csv(create(&p)?).map_err(CliError::Core)?;
        artifacts.push(p);
    }
    let lines: Vec<String> = report
        .conditions
        .iter()
        .map(|c| format!("{} collision {:.3} success {:.3}", c.label, c.collision_rate.mean, c.success_rate.mean))
        .collect();
    Ok(Outcome { summary: lines.join("; "), artifacts })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceResult {
    pub label: String,
    pub max_value_gap: Option<f64>,
    pub max_strategy_gap: Option<f64>,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Serialize)]
struct ReductionArtifact<'a> {
    config_fingerprint: String,
    code_version: &'a str,
    tolerance: f64,
    all_pass: bool,
    instances: &'a [InstanceResult],
}

/// Game-versus-reduction comparison on the configured 1D instances.
///
/// Precondition failures are reported per instance; the command fails with a
/// config error if any instance was rejected and with a numerical error if
/// any checked instance exceeds the tolerance.
pub fn check_reduction_cmd(config: &RunConfig) -> CliResult<(Outcome, Vec<InstanceResult>)> {
    let r = &config.reduction;
    let seeds = r.first_seed..r.first_seed + r.random_instances;
    let instances: Vec<(String, ReductionInstance)> = seeds
        .map(|s| (format!("random-{s}"), ReductionInstance::random(s)))
        .chain(r.instances.iter().enumerate().map(|(i, inst)| (format!("instance-{i}"), inst.clone())))
        .collect();
    let results: Vec<InstanceResult> = instances
        .iter()
        .map(|(label, inst)| match check_reduction(inst) {
            Ok(rep) => InstanceResult {
                label: label.clone(),
                max_value_gap: Some(rep.max_value_gap),
                max_strategy_gap: Some(rep.max_strategy_gap),
                pass: rep.max_value_gap <= r.tolerance && rep.max_strategy_gap <= r.tolerance,
                error: None,
            },
            Err(e) => InstanceResult {
                label: label.clone(),
                max_value_gap: None,
                max_strategy_gap: None,
                pass: false,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let all_pass = results.iter().all(|r| r.pass);
    let path = config.out.join(REDUCTION_REPORT_FILE);
    write_json(
        &path,
        &ReductionArtifact {
            config_fingerprint: config.fingerprint(),
            code_version: VERSION,
            tolerance: r.tolerance,
            all_pass,
            instances: &results,
        },
    )?;
    let worst = results.iter().filter_map(|r| r.max_value_gap).fold(0.0, f64::max);
    let outcome = Outcome {
        summary: format!(
            "{} of {} instances pass at {:e}; max |V1 - V2| {worst:.3e}",
            results.iter().filter(|r| r.pass).count(),
            results.len(),
            r.tolerance
        ),
        artifacts: vec![path],
    };
    Ok((outcome, results))
}

/// Exit status for a finished reduction check.
pub fn reduction_status(results: &[InstanceResult]) -> CliResult<()> {
    if let Some(bad) = results.iter().find(|r| r.error.is_some()) {
        return Err(CliError::config(format!("reduction ({})", bad.label), bad.error.clone().unwrap_or_default()));
    }
    if let Some(bad) = results.iter().find(|r| !r.pass) {
        return Err(CliError::Numerical(mpcguide::Error::SolverFailed(format!(
            "{}: value gap {:?} exceeds tolerance",
            bad.label, bad.max_value_gap
        ))));
    }
    Ok(())
}

/// Random obstacle field from the configured generator.
pub fn gen_world(config: &RunConfig) -> CliResult<Outcome> {
    let spec = config.world_generator.clone().unwrap_or_else(GenerationSpec::quadrotor);
    spec.validate().map_err(core("world_generator"))?;
    let world = generate_world(config.seed, &spec).map_err(core("world_generator"))?;
    let path = config.out.join(WORLD_FILE);
    write_json(&path, &world)?;
    Ok(Outcome { summary: format!("{} obstacles", world.obstacles().len()), artifacts: vec![path] })
}
