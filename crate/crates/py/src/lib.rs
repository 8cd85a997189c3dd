//! Python bindings: worlds, dynamics, the MPPI solver, the value-iteration
//! oracle, demonstration collection, training and experiments.
//!
//! Structured results cross the boundary as plain Python objects decoded
//! from JSON.

use std::fs::File;
use std::io::BufReader;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;

use mpcguide::dataset::Dataset;
use mpcguide::eval::{self, Condition, ExperimentSpec, Method};
use mpcguide::expert::Controller;
use mpcguide::oracle::{self, GridSpec, ReductionInstance};
use mpcguide::policy::{self, MlpPolicy, TrainConfig};
use mpcguide::scenario::Scenario;
use mpcguide::{guidance, mppi, Control, Dynamics, MppiConfig, State};

fn err(e: mpcguide::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(path: &str, e: std::io::Error) -> PyErr {
    PyIOError::new_err(format!("{path}: {e}"))
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Converts any serializable value into Python lists, dicts and numbers.
fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(json_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_method(kind: &str, ratio: f64) -> PyResult<Method> {
    Ok(match kind {
        "bc" => Method::Bc,
        "safegil" => Method::SafeGil { d_max_ratio: ratio },
        "gaussian" => Method::GaussianNoise { mean_abs_ratio: ratio },
        "uniform" => Method::UniformNoise { mean_abs_ratio: ratio },
        other => return Err(PyValueError::new_err(format!("unknown method {other:?}"))),
    })
}

/// Circular obstacles, a goal region and rectangular bounds.
#[pyclass(module = "mpcguide_py")]
struct World {
    inner: mpcguide::World,
}

#[pymethods]
impl World {
    /// Fixed corridor used by the Dubins scenario.
    #[staticmethod]
    fn corridor() -> Self {
        Self { inner: mpcguide::scenario::corridor_world() }
    }

    /// Two-obstacle field on the value-grid domain.
    #[staticmethod]
    fn verification() -> Self {
        Self { inner: mpcguide::scenario::verification_world() }
    }

    /// Random cylinder field from the quadrotor generator.
    #[staticmethod]
    fn generate(seed: u64) -> PyResult<Self> {
        let spec = mpcguide::world::GenerationSpec::quadrotor();
        Ok(Self { inner: mpcguide::world::generate_world(seed, &spec).map_err(err)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: mpcguide::World = serde_json::from_str(text).map_err(json_err)?;
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(json_err)
    }

    /// Distance to the nearest obstacle or boundary; negative inside.
    fn signed_distance(&self, x: f64, y: f64) -> f64 {
        self.inner.signed_distance([x, y])
    }

    fn __repr__(&self) -> String {
        format!("World({})", serde_json::to_string(&self.inner).unwrap_or_default())
    }
}

/// Discrete-time dynamics: `dubins3` or `quad4d`.
#[pyclass(module = "mpcguide_py")]
struct Model {
    inner: mpcguide::Model,
}

#[pymethods]
impl Model {
    #[new]
    fn new(id: &str) -> PyResult<Self> {
        Ok(Self { inner: mpcguide::Model::from_id(id).map_err(err)? })
    }

    #[getter]
    fn id(&self) -> &'static str {
        self.inner.id()
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    #[getter]
    fn control_dim(&self) -> usize {
        self.inner.control_dim()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt()
    }

    #[getter]
    fn control_bound(&self) -> Vec<f64> {
        self.inner.control_bound().to_vec()
    }

    /// One step from `state` under `control`.
    fn step(&self, state: Vec<f64>, control: Vec<f64>) -> PyResult<Vec<f64>> {
        let next = self.inner.step(&State::new(state), &Control::new(control)).map_err(err)?;
        Ok(next.0)
    }

    fn __repr__(&self) -> String {
        format!("Model({:?})", self.inner.id())
    }
}

/// Sampling-MPC settings.
#[pyclass(module = "mpcguide_py")]
struct MppiSettings {
    inner: MppiConfig,
}

#[pymethods]
impl MppiSettings {
    #[staticmethod]
    fn dubins(input_bound: f64) -> Self {
        Self { inner: MppiConfig::dubins(input_bound) }
    }

    #[staticmethod]
    fn quad4d(input_bound: f64) -> Self {
        Self { inner: MppiConfig::quad4d(input_bound) }
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn num_samples(&self) -> usize {
        self.inner.num_samples
    }

    #[setter]
    fn set_num_samples(&mut self, n: usize) {
        self.inner.num_samples = n;
    }

    #[getter]
    fn temperature(&self) -> f64 {
        self.inner.temperature
    }

    #[setter]
    fn set_temperature(&mut self, lambda: f64) {
        self.inner.temperature = lambda;
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(json_err)
    }
}

/// Solves the single-player safety problem from `state`.
///
/// Returns a dict with the weighted sequence, its cost and the elite set.
#[pyfunction]
fn solve_mppi<'py>(
    py: Python<'py>,
    model: &Model,
    world: &World,
    state: Vec<f64>,
    settings: &MppiSettings,
) -> PyResult<Bound<'py, PyAny>> {
    let x = State::new(state);
    let result = py.detach(|| mppi::solve(&model.inner, &world.inner, &x, &settings.inner, None)).map_err(err)?;
    to_py(py, &result)
}

/// Worst-case bang-bang disturbance at `state` for per-component bound `d_bar`.
#[pyfunction]
fn optimal_disturbance(
    py: Python<'_>,
    model: &Model,
    world: &World,
    state: Vec<f64>,
    d_bar: Vec<f64>,
    settings: &MppiSettings,
) -> PyResult<Vec<f64>> {
    let x = State::new(state);
    let (d, _) = py
        .detach(|| guidance::optimal_disturbance(&model.inner, &world.inner, &x, &d_bar, &settings.inner, None))
        .map_err(err)?;
    Ok(d.0)
}

/// Converged robust value function on an `(x, y, θ)` grid.
#[pyclass(module = "mpcguide_py")]
struct ValueGrid {
    inner: oracle::ValueGrid,
}

#[pymethods]
impl ValueGrid {
    /// Runs value iteration for the Dubins car on the verification domain.
    #[staticmethod]
    fn solve(py: Python<'_>, world: &World, grid_n: usize, d_bar: f64) -> PyResult<Self> {
        let spec = GridSpec::verification(grid_n);
        let model = mpcguide::Dubins::default();
        let inner = py.detach(|| oracle::value_iteration(&model, &world.inner, &spec, d_bar)).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let f = File::open(path).map_err(|e| io_err(path, e))?;
        Ok(Self { inner: oracle::ValueGrid::read_from(BufReader::new(f)).map_err(err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let f = File::create(path).map_err(|e| io_err(path, e))?;
        self.inner.write_to(f).map_err(err)
    }

    #[getter]
    fn shape(&self) -> [usize; 3] {
        self.inner.shape()
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    fn value(&self, state: Vec<f64>) -> PyResult<f64> {
        if state.len() != 3 || !self.inner.contains(&state) {
            return Err(PyValueError::new_err("state lies outside the grid"));
        }
        Ok(self.inner.interpolate(&state))
    }

    /// `-d_bar·sign(dV/dθ)`, or `None` where the heading gradient vanishes.
    fn oracle_disturbance(&self, state: Vec<f64>, d_bar: f64) -> PyResult<Option<f64>> {
        let d = oracle::oracle_disturbance(&self.inner, &state, d_bar, oracle::GRADIENT_EPS).map_err(err)?;
        Ok(d.value())
    }
}

/// Game-versus-reduction comparison on a random monotone 1D instance.
#[pyfunction]
fn check_reduction<'py>(py: Python<'py>, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let inst = ReductionInstance::random(seed);
    let report = oracle::check_reduction(&inst).map_err(err)?;
    let summary = serde_json::json!({
        "max_value_gap": report.max_value_gap,
        "max_strategy_gap": report.max_strategy_gap,
        "strategies_checked": report.strategies_checked,
        "horizon": inst.horizon,
    });
    to_py(py, &summary)
}

/// Demonstrations with clean expert labels.
#[pyclass(module = "mpcguide_py")]
struct DemoSet {
    inner: Dataset,
    control_bound: Vec<f64>,
}

#[pymethods]
impl DemoSet {
    #[getter]
    fn num_demos(&self) -> usize {
        self.inner.demos.len()
    }

    #[getter]
    fn num_records(&self) -> usize {
        self.inner.num_records()
    }

    fn __len__(&self) -> usize {
        self.inner.num_records()
    }

    fn save_csv(&self, path: &str) -> PyResult<()> {
        let f = File::create(path).map_err(|e| io_err(path, e))?;
        self.inner.write_csv(f).map_err(err)
    }

    #[staticmethod]
    fn load_csv(path: &str, model: &Model) -> PyResult<Self> {
        let f = File::open(path).map_err(|e| io_err(path, e))?;
        let control_bound = model.inner.control_bound().to_vec();
        let inner = Dataset::read_csv(BufReader::new(f), &control_bound).map_err(err)?;
        Ok(Self { inner, control_bound })
    }

    /// `(state, expert_action, disturbance)` triples, in collection order.
    fn records(&self) -> Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        self.inner
            .records()
            .map(|(_, r)| (r.state.0.clone(), r.expert_action.0.clone(), r.applied_disturbance.0.clone()))
            .collect()
    }
}

/// Trained MLP policy.
#[pyclass(module = "mpcguide_py")]
struct Policy {
    inner: MlpPolicy,
}

#[pymethods]
impl Policy {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let f = File::open(path).map_err(|e| io_err(path, e))?;
        Ok(Self { inner: MlpPolicy::read_from(BufReader::new(f)).map_err(err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let f = File::create(path).map_err(|e| io_err(path, e))?;
        self.inner.write_to(f).map_err(err)
    }

    /// Bounded action for `state` in `world`.
    fn act(&self, world: &World, state: Vec<f64>) -> Vec<f64> {
        self.inner.act(&world.inner, &state)
    }
}

/// Experiment definition: scenario, conditions, seeds and budgets.
#[pyclass(module = "mpcguide_py")]
struct Experiment {
    inner: ExperimentSpec,
}

#[pymethods]
impl Experiment {
    /// Dubins corridor with the given `(method, ratio, filtered)` conditions.
    #[staticmethod]
    #[pyo3(signature = (conditions, quad = false))]
    fn preset(conditions: Vec<(String, f64, bool)>, quad: bool) -> PyResult<Self> {
        let conditions = conditions
            .iter()
            .map(|(kind, ratio, filtered)| Ok(Condition::new(parse_method(kind, *ratio)?, *filtered)))
            .collect::<PyResult<Vec<_>>>()?;
        let inner =
            if quad { ExperimentSpec::quad_default(conditions) } else { ExperimentSpec::dubins_default(conditions) };
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: ExperimentSpec = serde_json::from_str(text).map_err(json_err)?;
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(json_err)
    }

    #[getter]
    fn seeds(&self) -> Vec<u64> {
        self.inner.seeds.clone()
    }

    #[setter]
    fn set_seeds(&mut self, seeds: Vec<u64>) {
        self.inner.seeds = seeds;
    }

    #[getter]
    fn n_eval(&self) -> usize {
        self.inner.n_eval
    }

    #[setter]
    fn set_n_eval(&mut self, n: usize) {
        self.inner.n_eval = n;
    }

    #[getter]
    fn demo_counts(&self) -> Vec<usize> {
        self.inner.demo_counts.clone()
    }

    #[setter]
    fn set_demo_counts(&mut self, counts: Vec<usize>) {
        self.inner.demo_counts = counts;
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.inner.train.epochs
    }

    #[setter]
    fn set_epochs(&mut self, epochs: usize) {
        self.inner.train.epochs = epochs;
    }

    #[getter]
    fn model(&self) -> Model {
        Model { inner: self.inner.scenario.model.clone() }
    }

    /// Collects `num_demos` demonstrations with `method` (`bc`, `safegil`,
    /// `gaussian` or `uniform`) and magnitude `ratio`.
    #[pyo3(signature = (method, num_demos, seed, ratio = 0.0))]
    fn collect(&self, py: Python<'_>, method: &str, num_demos: usize, seed: u64, ratio: f64) -> PyResult<DemoSet> {
        let method = parse_method(method, ratio)?;
        let inner = py.detach(|| eval::collect_for(&self.inner, &method, num_demos, seed)).map_err(err)?;
        Ok(DemoSet { inner, control_bound: self.inner.scenario.model.control_bound().to_vec() })
    }

    /// Behavior cloning with this experiment's training settings.
    ///
    /// Returns the policy and the per-epoch training report.
    fn train<'py>(&self, py: Python<'py>, demos: &DemoSet, seed: u64) -> PyResult<(Policy, Bound<'py, PyAny>)> {
        if demos.control_bound != self.inner.scenario.model.control_bound() {
            return Err(PyValueError::new_err("demonstrations come from a different model"));
        }
        let config = TrainConfig { seed, ..self.inner.train.clone() };
        let scenario: &Scenario = &self.inner.scenario;
        let (inner, report) = py.detach(|| policy::train(&demos.inner, scenario, &config)).map_err(err)?;
        Ok((Policy { inner }, to_py(py, &report)?))
    }

    /// Held-out rollouts of `policy` for evaluation seed `seed`.
    #[pyo3(signature = (policy, seed, filtered = false))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        policy: &Policy,
        seed: u64,
        filtered: bool,
    ) -> PyResult<Bound<'py, PyAny>> {
        let results = py
            .detach(|| {
                let plan = self.inner.seed_eval(seed)?;
                plan.run(&self.inner, &policy.inner, filtered)
            })
            .map_err(err)?;
        to_py(py, &eval::RolloutSummary::of(&results))
    }

    /// Runs every condition, seed and demonstration count.
    fn run<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let report = py.detach(|| eval::run_experiment(&self.inner)).map_err(err)?;
        to_py(py, &report)
    }
}

#[pymodule]
fn mpcguide_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", mpcguide::VERSION)?;
    m.add_class::<World>()?;
    m.add_class::<Model>()?;
    m.add_class::<MppiSettings>()?;
    m.add_class::<ValueGrid>()?;
    m.add_class::<DemoSet>()?;
    m.add_class::<Policy>()?;
    m.add_class::<Experiment>()?;
    m.add_function(wrap_pyfunction!(solve_mppi, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_disturbance, m)?)?;
    m.add_function(wrap_pyfunction!(check_reduction, m)?)?;
    Ok(())
}
