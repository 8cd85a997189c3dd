//! Robust value iteration on a `(p_x, p_y, θ)` grid for the Dubins car.
//!
//! `V_{k+1}(x) = min{ l(x), max_u min_{d = ±d̄} Ṽ_k(f(x, u + d)) }` with
//! multilinear interpolation `Ṽ`, starting from `V_0 = l`. The sweep is
//! monotone non-increasing, so iteration stops once the max-norm change
//! falls below the tolerance. Nodes inside the failure set keep `V = l`,
//! since a collision ends the trajectory.

use std::io::{Read, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{wrap_angle, Dubins, State};
use crate::error::{Error, Result};
use crate::seed;
use crate::world::World;

/// Uniform grid axis. A periodic axis spans one period with both endpoints
/// stored, so the first and last nodes describe the same state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub n: usize,
    pub periodic: bool,
}

impl Axis {
    pub fn new(min: f64, max: f64, n: usize) -> Self {
        Self { min, max, n, periodic: false }
    }

    pub fn periodic(min: f64, max: f64, n: usize) -> Self {
        Self { min, max, n, periodic: true }
    }

    pub fn spacing(&self) -> f64 {
        (self.max - self.min) / (self.n - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.max
        } else {
            self.min + i as f64 * self.spacing()
        }
    }

    /// Lower cell index and fractional offset of `v`, clamping (or wrapping) to the axis.
    #[inline]
    fn locate(&self, v: f64) -> (usize, f64) {
        let period = self.max - self.min;
        let v = if self.periodic { self.min + (v - self.min).rem_euclid(period) } else { v.clamp(self.min, self.max) };
        let s = (v - self.min) / self.spacing();
        let i = (s.floor() as usize).min(self.n - 2);
        (i, (s - i as f64).clamp(0.0, 1.0))
    }

    fn contains(&self, v: f64) -> bool {
        self.periodic || (v >= self.min && v <= self.max)
    }
}

/// Grid resolution and solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub px: Axis,
    pub py: Axis,
    pub theta: Axis,
    /// Number of points in the discretized control set on `[-ū, ū]`.
    pub u_points: usize,
    pub tol: f64,
    pub max_iters: usize,
}

impl GridSpec {
    /// `n³` grid over `[0, 6] × [-3, 3] × [-π, π]`, the domain of the verification world.
    ///
    /// The tolerance is loose on purpose: after roughly a hundred sweeps only a
    /// few hundred nodes still creep downward by ~1e-6 per sweep, which never
    /// changes the sign of the heading derivative.
    pub fn verification(n: usize) -> Self {
        use std::f64::consts::PI;
        Self {
            px: Axis::new(0.0, 6.0, n),
            py: Axis::new(-3.0, 3.0, n),
            theta: Axis::periodic(-PI, PI, n),
            u_points: 21,
            tol: 1e-4,
            max_iters: 2000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for a in [&self.px, &self.py, &self.theta] {
            if a.n < 3 || !(a.max > a.min) {
                return Err(Error::Config("grid axes need at least 3 nodes over a nonempty range".into()));
            }
        }
        if !self.theta.periodic || self.px.periodic || self.py.periodic {
            return Err(Error::Config("only the heading axis may be periodic".into()));
        }
        if self.u_points < 2 || !(self.tol > 0.0) || self.max_iters == 0 {
            return Err(Error::Config("grid solver settings out of range".into()));
        }
        Ok(())
    }
}

/// Converged robust value function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueGrid {
    pub axes: [Axis; 3],
    /// Row-major over `(p_x, p_y, θ)`.
    #[serde(skip)]
    pub values: Vec<f64>,
    pub d_bar: f64,
    pub tol: f64,
    pub iterations: usize,
    pub residual: f64,
    pub horizon_converged: bool,
}

impl ValueGrid {
    pub fn shape(&self) -> [usize; 3] {
        [self.axes[0].n, self.axes[1].n, self.axes[2].n]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.axes[1].n + j) * self.axes[2].n + k
    }

    pub fn node_state(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [self.axes[0].node(i), self.axes[1].node(j), self.axes[2].node(k)]
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.axes.iter().zip(x).all(|(a, v)| a.contains(*v))
    }

    /// Trilinear interpolation with clamped position and wrapped heading.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        interpolate(&self.axes, &self.values, x)
    }

    /// Writes the binary form: magic, header length, JSON header, `f64` LE values.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_vec(self)?;
        w.write_all(GRID_MAGIC)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let (header, body) = crate::policy::split_payload(&bytes, GRID_MAGIC)?;
        let mut grid: ValueGrid = serde_json::from_slice(header).map_err(|e| Error::Parse(e.to_string()))?;
        let n: usize = grid.shape().iter().product();
        if body.len() != n * 8 {
            return Err(Error::Parse(format!("expected {n} grid values, found {} bytes", body.len())));
        }
        grid.values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(grid)
    }
}

const GRID_MAGIC: &[u8; 4] = b"VGRD";

#[inline]
fn interpolate(axes: &[Axis; 3], values: &[f64], x: &[f64]) -> f64 {
    let (i, fx) = axes[0].locate(x[0]);
    let (j, fy) = axes[1].locate(x[1]);
    let (k, ft) = axes[2].locate(x[2]);
    let (ny, nt) = (axes[1].n, axes[2].n);
    let at = |a: usize, b: usize, c: usize| values[(a * ny + b) * nt + c];
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let c00 = lerp(at(i, j, k), at(i, j, k + 1), ft);
    let c01 = lerp(at(i, j + 1, k), at(i, j + 1, k + 1), ft);
    let c10 = lerp(at(i + 1, j, k), at(i + 1, j, k + 1), ft);
    let c11 = lerp(at(i + 1, j + 1, k), at(i + 1, j + 1, k + 1), ft);
    lerp(lerp(c00, c01, fy), lerp(c10, c11, fy), fx)
}

/// Robust value iteration for one `(model, world, grid, d̄)` setup.
pub struct RobustValueIteration {
    model: Dubins,
    spec: GridSpec,
    d_bar: f64,
    margin: Vec<f64>,
    inputs: Vec<f64>,
}

impl RobustValueIteration {
    pub fn new(model: &Dubins, world: &World, spec: &GridSpec, d_bar: f64) -> Result<Self> {
        spec.validate()?;
        let u_bar = model.omega_max();
        if !(d_bar >= 0.0 && d_bar < u_bar) {
            return Err(Error::Precondition(format!("d_bar {d_bar} must lie in [0, {u_bar})")));
        }
        let axes = [spec.px, spec.py, spec.theta];
        let mut margin = Vec::with_capacity(axes.iter().map(|a| a.n).product());
        for i in 0..axes[0].n {
            for j in 0..axes[1].n {
                let l = world.signed_distance([axes[0].node(i), axes[1].node(j)]);
                margin.extend(std::iter::repeat_n(l, axes[2].n));
            }
        }
        let inputs = (0..spec.u_points).map(|q| -u_bar + 2.0 * u_bar * q as f64 / (spec.u_points - 1) as f64).collect();
        Ok(Self { model: model.clone(), spec: spec.clone(), d_bar, margin, inputs })
    }

    fn axes(&self) -> [Axis; 3] {
        [self.spec.px, self.spec.py, self.spec.theta]
    }

    /// `V_0 = l` at the nodes.
    pub fn initial(&self) -> Vec<f64> {
        self.margin.clone()
    }

    pub fn margin(&self) -> &[f64] {
        &self.margin
    }

    /// One synchronous backup `V_k → V_{k+1}`.
    pub fn sweep(&self, values: &[f64]) -> Vec<f64> {
        let axes = self.axes();
        let (ny, nt) = (axes[1].n, axes[2].n);
        let dt = self.model.dt;
        let step = dt * self.model.speed;
        let mut next = vec![0.0; values.len()];
        next.par_chunks_mut(nt).enumerate().for_each(|(row, out)| {
            let (i, j) = (row / ny, row % ny);
            let (px, py) = (axes[0].node(i), axes[1].node(j));
            for (k, o) in out.iter_mut().enumerate().take(nt - 1) {
                let l = self.margin[row * nt + k];
                if l <= 0.0 {
                    // The failure set is absorbing: a collision ends the trajectory.
                    *o = l;
                    continue;
                }
                let theta = axes[2].node(k);
                let (s, c) = theta.sin_cos();
                // Position update does not depend on the input, so only the
                // heading coordinate varies across the candidate inputs.
                let p = [px + step * c, py + step * s];
                let mut best = f64::NEG_INFINITY;
                for &u in &self.inputs {
                    let lo = interpolate(&axes, values, &[p[0], p[1], wrap_angle(theta + dt * (u - self.d_bar))]);
                    let hi = interpolate(&axes, values, &[p[0], p[1], wrap_angle(theta + dt * (u + self.d_bar))]);
                    best = best.max(lo.min(hi));
                }
                *o = l.min(best);
            }
            out[nt - 1] = out[0];
        });
        next
    }

    /// Iterates to convergence.
    pub fn run(&self) -> Result<ValueGrid> {
        let mut values = self.initial();
        let mut residual = f64::INFINITY;
        let mut iterations = 0;
        while iterations < self.spec.max_iters {
            let next = self.sweep(&values);
            residual = next.iter().zip(&values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            values = next;
            iterations += 1;
            if residual < self.spec.tol {
                return Ok(ValueGrid {
                    axes: self.axes(),
                    values,
                    d_bar: self.d_bar,
                    tol: self.spec.tol,
                    iterations,
                    residual,
                    horizon_converged: true,
                });
            }
        }
        Err(Error::NotConverged { iterations, residual })
    }
}

/// Converged robust value grid for the Dubins car.
pub fn value_iteration(model: &Dubins, world: &World, spec: &GridSpec, d_bar: f64) -> Result<ValueGrid> {
    RobustValueIteration::new(model, world, spec, d_bar)?.run()
}

/// Default threshold below which `|∂V/∂θ|` counts as zero (value units per radian).
pub const GRADIENT_EPS: f64 = 1e-3;

/// Oracle disturbance at a state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleDisturbance {
    /// Bang-bang disturbance on the heading rate.
    Push { d: f64, gradient: f64 },
    /// The value does not depend on heading here; any disturbance is equally bad.
    Degenerate { gradient: f64 },
}

impl OracleDisturbance {
    pub fn value(&self) -> Option<f64> {
        match *self {
            OracleDisturbance::Push { d, .. } => Some(d),
            OracleDisturbance::Degenerate { .. } => None,
        }
    }
}

/// `d* = −d̄·sign(∂V/∂θ)` from a central difference one grid step wide.
pub fn oracle_disturbance(grid: &ValueGrid, x: &[f64], d_bar: f64, gradient_eps: f64) -> Result<OracleDisturbance> {
    if x.len() != 3 || !grid.contains(x) {
        return Err(Error::InvalidQuery(format!("state {x:?} lies outside the value grid")));
    }
    let h = grid.axes[2].spacing();
    let plus = grid.interpolate(&[x[0], x[1], x[2] + h]);
    let minus = grid.interpolate(&[x[0], x[1], x[2] - h]);
    let gradient = (plus - minus) / (2.0 * h);
    if gradient.abs() < gradient_eps {
        return Ok(OracleDisturbance::Degenerate { gradient });
    }
    Ok(OracleDisturbance::Push { d: -d_bar * gradient.signum(), gradient })
}

/// Outcome of the disturbance-field comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseReport {
    pub mse: f64,
    pub num_samples: usize,
    /// Fraction of samples where both fields push the same way.
    pub agreement: f64,
    pub rejected_in_obstacle: usize,
    pub rejected_degenerate: usize,
    pub d_bar: f64,
}

/// Compares a candidate disturbance field against the oracle on uniformly
/// sampled free-space states with non-degenerate gradient.
///
/// `field(i, x)` returns the candidate disturbance for sample `i`.
pub fn disturbance_field_mse<F>(
    grid: &ValueGrid,
    world: &World,
    d_bar: f64,
    num_samples: usize,
    seed: u64,
    gradient_eps: f64,
    field: F,
) -> Result<MseReport>
where
    F: Fn(usize, &State) -> Result<f64> + Sync,
{
    let mut rng = seed::stream_rng(seed::derive(seed, "field-states"), 0);
    let mut states = Vec::with_capacity(num_samples);
    let (mut in_obstacle, mut degenerate) = (0, 0);
    let max_attempts = 1000 * num_samples.max(1);
    let mut attempts = 0;
    while states.len() < num_samples {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::SolverFailed("could not find enough non-degenerate free-space states".into()));
        }
        let x: Vec<f64> = grid.axes.iter().map(|a| a.min + (a.max - a.min) * rng.random::<f64>()).collect();
        if world.signed_distance([x[0], x[1]]) <= 0.0 {
            in_obstacle += 1;
            continue;
        }
        match oracle_disturbance(grid, &x, d_bar, gradient_eps)? {
            OracleDisturbance::Push { d, .. } => states.push((State(x), d)),
            OracleDisturbance::Degenerate { .. } => degenerate += 1,
        }
    }
    let candidate = states.par_iter().enumerate().map(|(i, (x, _))| field(i, x)).collect::<Result<Vec<f64>>>()?;
    let n = states.len().max(1) as f64;
    let mse = states.iter().zip(&candidate).map(|((_, o), c)| (c - o).powi(2)).sum::<f64>() / n;
    let agreement =
        states.iter().zip(&candidate).filter(|((_, o), c)| o.signum() == c.signum() && **c != 0.0).count() as f64 / n;
    Ok(MseReport {
        mse,
        num_samples: states.len(),
        agreement,
        rejected_in_obstacle: in_obstacle,
        rejected_degenerate: degenerate,
        d_bar,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::verification_world;
    use crate::world::{Bounds, Goal};

    fn small_spec() -> GridSpec {
        GridSpec { max_iters: 500, ..GridSpec::verification(21) }
    }

    #[test]
    fn periodic_axis_wraps() {
        let a = Axis::periodic(-std::f64::consts::PI, std::f64::consts::PI, 5);
        let (i, f) = a.locate(std::f64::consts::PI + 0.1);
        let (i2, f2) = a.locate(-std::f64::consts::PI + 0.1);
        assert_eq!(i, i2);
        assert!((f - f2).abs() < 1e-12);
    }

    #[test]
    fn empty_world_stays_at_sentinel() {
        let world = World::new(vec![], Goal::Line { x: 100.0 }, Bounds::new(0.0, 6.0, -3.0, 3.0)).unwrap();
        let grid = value_iteration(&Dubins::default(), &world, &small_spec(), 0.5).unwrap();
        assert!(grid.values.iter().all(|&v| v == crate::world::NO_OBSTACLE_DISTANCE));
        assert_eq!(grid.iterations, 1);
    }

    #[test]
    fn obstacle_nodes_keep_their_margin() {
        let world = verification_world();
        let vi = RobustValueIteration::new(&Dubins::default(), &world, &small_spec(), 0.5).unwrap();
        let grid = vi.run().unwrap();
        let mut inside = 0;
        for (v, l) in grid.values.iter().zip(vi.margin()) {
            if *l <= 0.0 {
                inside += 1;
                assert_eq!(v, l);
            }
            assert!(v <= l);
        }
        assert!(inside > 0);
    }

    #[test]
    fn sweeps_are_monotone_and_brt_contains_obstacles() {
        let world = verification_world();
        let vi = RobustValueIteration::new(&Dubins::default(), &world, &small_spec(), 0.5).unwrap();
        let mut v = vi.initial();
        for _ in 0..40 {
            let next = vi.sweep(&v);
            assert!(next.iter().zip(&v).all(|(a, b)| a <= b));
            v = next;
        }
        let brt = v.iter().filter(|x| **x <= 0.0).count();
        let obstacles = vi.margin().iter().filter(|x| **x <= 0.0).count();
        assert!(v.iter().zip(vi.margin()).all(|(val, l)| *l > 0.0 || *val <= 0.0));
        assert!(brt > obstacles, "BRT should strictly contain the obstacle set");
    }

    #[test]
    fn periodic_seam_is_consistent() {
        let grid = value_iteration(&Dubins::default(), &verification_world(), &small_spec(), 0.5).unwrap();
        let [nx, ny, nt] = grid.shape();
        for i in 0..nx {
            for j in 0..ny {
                assert_eq!(grid.values[grid.index(i, j, 0)], grid.values[grid.index(i, j, nt - 1)]);
            }
        }
    }

    #[test]
    fn oracle_sign_rule_and_errors() {
        let mut grid = value_iteration(&Dubins::default(), &verification_world(), &small_spec(), 0.5).unwrap();
        // Overwrite with V = θ (positive gradient) then V = −θ.
        let [nx, ny, nt] = grid.shape();
        for sign in [1.0, -1.0] {
            for i in 0..nx {
                for j in 0..ny {
                    for k in 0..nt {
                        let idx = grid.index(i, j, k);
                        grid.values[idx] = sign * 0.1 * (k as f64);
                    }
                }
            }
            let d = oracle_disturbance(&grid, &[3.0, 0.0, 0.0], 0.5, GRADIENT_EPS).unwrap();
            assert_eq!(d.value(), Some(-0.5 * sign));
        }
        grid.values.iter_mut().for_each(|v| *v = 1.0);
        assert!(matches!(
            oracle_disturbance(&grid, &[3.0, 0.0, 0.0], 0.5, GRADIENT_EPS).unwrap(),
            OracleDisturbance::Degenerate { .. }
        ));
        assert!(oracle_disturbance(&grid, &[7.0, 0.0, 0.0], 0.5, GRADIENT_EPS).is_err());
    }

    #[test]
    fn self_comparison_and_total_disagreement() {
        let world = verification_world();
        let grid = value_iteration(&Dubins::default(), &world, &small_spec(), 0.5).unwrap();
        let oracle = |_: usize, x: &State| Ok(oracle_disturbance(&grid, x, 0.5, GRADIENT_EPS)?.value().unwrap());
        let r = disturbance_field_mse(&grid, &world, 0.5, 200, 3, GRADIENT_EPS, oracle).unwrap();
        assert_eq!(r.mse, 0.0);
        assert_eq!(r.agreement, 1.0);
        let flipped = |_: usize, x: &State| Ok(-oracle_disturbance(&grid, x, 0.5, GRADIENT_EPS)?.value().unwrap());
        let r = disturbance_field_mse(&grid, &world, 0.5, 200, 3, GRADIENT_EPS, flipped).unwrap();
        assert!((r.mse - 1.0).abs() < 1e-12);
    }

    #[test]
    fn binary_round_trip() {
        let grid = value_iteration(&Dubins::default(), &verification_world(), &small_spec(), 0.5).unwrap();
        let mut buf = Vec::new();
        grid.write_to(&mut buf).unwrap();
        let back = ValueGrid::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, grid);
        assert!(ValueGrid::read_from(&buf[..buf.len() - 3]).is_err());
    }
}
