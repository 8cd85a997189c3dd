//! Numerical check that the max-min game over `(u, d)` collapses to a single
//! maximization over `w = u + d` with `|w| ≤ ū − d̄`.
//!
//! Both sides are evaluated by dynamic programming on a scalar control-affine
//! system `x' = f1(x) + f2(x)·w` over a 1-D node grid, using the same
//! clamped linear interpolation. The collapse is exact whenever the
//! continuation value is monotone in `w` at every node, which the random
//! instance family guarantees by construction. Without monotonicity the two
//! sides can differ; see the `non_monotone_value_breaks_equality` test.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Grid membership tolerance for `|u + d| ≤ w̄`.
const MEMBER_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionInstance {
    pub x_min: f64,
    pub x_max: f64,
    /// Drift `f1` at each node.
    pub f1: Vec<f64>,
    /// Input gain `f2` at each node.
    pub f2: Vec<f64>,
    /// Safety margin `l` at each node.
    pub l: Vec<f64>,
    pub u_bar: f64,
    pub d_bar: f64,
    pub horizon: usize,
    pub u_grid: Vec<f64>,
    pub d_grid: Vec<f64>,
    pub w_grid: Vec<f64>,
}

fn symmetric_grid(bound: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    let mut g: Vec<f64> = (0..n).map(|i| -bound + 2.0 * bound * i as f64 / (n - 1) as f64).collect();
    // Force exact symmetry so that sums like `ū + (−d̄)` hit the endpoints exactly.
    for i in 0..n / 2 {
        g[n - 1 - i] = -g[i];
    }
    if n % 2 == 1 {
        g[n / 2] = 0.0;
    }
    g
}

impl ReductionInstance {
    /// Builds uniform symmetric `u` and `d` grids and the derived `w` grid.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        x_min: f64,
        x_max: f64,
        f1: Vec<f64>,
        f2: Vec<f64>,
        l: Vec<f64>,
        u_bar: f64,
        d_bar: f64,
        horizon: usize,
        u_points: usize,
        d_points: usize,
    ) -> Result<Self> {
        let u_grid = symmetric_grid(u_bar, u_points);
        let d_grid = symmetric_grid(d_bar, d_points);
        let w_grid = Self::matched_w_grid(&u_grid, &d_grid, u_bar - d_bar);
        let inst = Self { x_min, x_max, f1, f2, l, u_bar, d_bar, horizon, u_grid, d_grid, w_grid };
        inst.validate()?;
        Ok(inst)
    }

    /// `{u + d : u ∈ U, d ∈ D} ∩ [−w̄, w̄]`, sorted and deduplicated.
    pub fn matched_w_grid(u_grid: &[f64], d_grid: &[f64], w_bar: f64) -> Vec<f64> {
        let mut w: Vec<f64> = u_grid
            .iter()
            .flat_map(|u| d_grid.iter().map(move |d| u + d))
            .filter(|w| w.abs() <= w_bar + MEMBER_TOL)
            .collect();
        w.sort_by(f64::total_cmp);
        w.dedup_by(|a, b| (*a - *b).abs() <= MEMBER_TOL);
        w
    }

    pub fn nodes(&self) -> usize {
        self.l.len()
    }

    pub fn node(&self, i: usize) -> f64 {
        self.x_min + (self.x_max - self.x_min) * i as f64 / (self.nodes() - 1) as f64
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.l.len();
        if n < 2 || self.f1.len() != n || self.f2.len() != n || !(self.x_max > self.x_min) {
            return Err(Error::Precondition("node tables must share a length of at least 2".into()));
        }
        if !(self.d_bar >= 0.0 && self.d_bar < self.u_bar) {
            return Err(Error::Precondition(format!(
                "need 0 <= d_bar < u_bar, got d_bar = {}, u_bar = {}",
                self.d_bar, self.u_bar
            )));
        }
        let symmetric = |g: &[f64], b: f64| {
            !g.is_empty()
                && g.windows(2).all(|p| p[0] < p[1])
                && g.iter().zip(g.iter().rev()).all(|(a, c)| *a == -*c)
                && (g.len() == 1 && b == 0.0 || g[g.len() - 1] == b)
        };
        if !symmetric(&self.u_grid, self.u_bar) || !symmetric(&self.d_grid, self.d_bar) {
            return Err(Error::Precondition("u and d grids must be sorted, symmetric and span their bounds".into()));
        }
        if self.w_grid != Self::matched_w_grid(&self.u_grid, &self.d_grid, self.u_bar - self.d_bar) {
            return Err(Error::Precondition("w grid does not match the u and d grids".into()));
        }
        Ok(())
    }

    /// Random instance whose value functions are monotone in the state, which
    /// makes the continuation monotone in `w` at every node.
    pub fn random(seed: u64) -> Self {
        let mut rng = seed::stream_rng(seed::derive(seed, "reduction"), 0);
        let n = 201;
        let (x_min, x_max) = (-1.0, 1.0);
        let u_bar = rng.random_range(0.5..2.0);
        let d_bar = u_bar * rng.random_range(0.0..0.9);
        let horizon = rng.random_range(1..=8);
        let direction = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let mut acc = 0.0;
        let mut l: Vec<f64> = (0..n)
            .map(|_| {
                acc += rng.random_range(0.0..0.03);
                acc
            })
            .collect();
        let pivot = l[rng.random_range(n / 4..3 * n / 4)];
        l.iter_mut().for_each(|v| *v = direction * (*v - pivot));
        let beta = rng.random_range(-0.1..0.1);
        let gamma = rng.random_range(-0.05..0.05);
        let c: f64 = rng.random_range(0.05..0.2) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        let k = rng.random_range(-0.5..0.5) * c.abs();
        let node = |i: usize| x_min + (x_max - x_min) * i as f64 / (n - 1) as f64;
        let f1 = (0..n).map(|i| (1.0 + beta) * node(i) + gamma).collect();
        let f2 = (0..n).map(|i| c + k * node(i)).collect();
        Self::new(x_min, x_max, f1, f2, l, u_bar, d_bar, horizon, 11, 3).expect("random instances are valid")
    }

    #[inline]
    fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        let n = values.len();
        let s = ((x - self.x_min) / (self.x_max - self.x_min) * (n - 1) as f64).clamp(0.0, (n - 1) as f64);
        let i = (s.floor() as usize).min(n - 2);
        let t = s - i as f64;
        values[i] + (values[i + 1] - values[i]) * t
    }

    fn continuation(&self, next: &[f64], i: usize, w: f64) -> f64 {
        self.interpolate(next, self.f1[i] + self.f2[i] * w)
    }

    /// Backup of the two-player problem at node `i`.
    fn max_min(&self, next: &[f64], i: usize) -> f64 {
        self.u_grid
            .iter()
            .map(|u| self.d_grid.iter().map(|d| self.continuation(next, i, u + d)).fold(f64::INFINITY, f64::min))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Backup of the reduced problem at node `i`, with the maximizing `w`
    /// (ties go to the smallest `|w|`).
    fn max_w(&self, next: &[f64], i: usize) -> (f64, f64) {
        let mut best = (f64::NEG_INFINITY, 0.0f64);
        for &w in &self.w_grid {
            let v = self.continuation(next, i, w);
            if v > best.0 || (v == best.0 && w.abs() < best.1.abs()) {
                best = (v, w);
            }
        }
        best
    }
}

/// Two-player strategy recovered from a reduced maximizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveredStrategy {
    pub w: f64,
    pub u: f64,
    pub d: f64,
}

impl RecoveredStrategy {
    /// `u* = w* + d̄·sign(w*)`, `d* = −d̄·sign(w*)`; both zero-sign cases give `d* = 0`.
    pub fn from_w(w: f64, d_bar: f64) -> Self {
        let s = if w > 0.0 {
            1.0
        } else if w < 0.0 {
            -1.0
        } else {
            0.0
        };
        Self { w, u: w + d_bar * s, d: -d_bar * s }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionReport {
    /// Max-min values, indexed `[t][node]` for `t = 0..=T`.
    pub v_game: Vec<Vec<f64>>,
    /// Reduced values, same layout.
    pub v_reduced: Vec<Vec<f64>>,
    pub max_value_gap: f64,
    /// Largest `|min_d Ṽ(f(x, u* + d)) − Ṽ(f(x, w*))|` over nodes with `w* ≠ 0`.
    pub max_strategy_gap: f64,
    pub strategies_checked: usize,
    /// Recovered `u*` that fell outside `[−ū, ū]`.
    pub infeasible_strategies: usize,
}

/// Runs both dynamic programs and the strategy recovery check.
pub fn check_reduction(inst: &ReductionInstance) -> Result<ReductionReport> {
    inst.validate()?;
    let n = inst.nodes();
    let mut v_game = vec![inst.l.clone()];
    let mut v_reduced = vec![inst.l.clone()];
    let mut max_strategy_gap: f64 = 0.0;
    let mut checked = 0;
    let mut infeasible = 0;
    for _ in 0..inst.horizon {
        let next_g = v_game.last().unwrap();
        let next_r = v_reduced.last().unwrap();
        let mut cur_g = vec![0.0; n];
        let mut cur_r = vec![0.0; n];
        for i in 0..n {
            cur_g[i] = inst.l[i].min(inst.max_min(next_g, i));
            let (best, w) = inst.max_w(next_r, i);
            cur_r[i] = inst.l[i].min(best);
            if w != 0.0 {
                let s = RecoveredStrategy::from_w(w, inst.d_bar);
                if s.u.abs() > inst.u_bar + MEMBER_TOL {
                    infeasible += 1;
                }
                let worst =
                    inst.d_grid.iter().map(|d| inst.continuation(next_r, i, s.u + d)).fold(f64::INFINITY, f64::min);
                max_strategy_gap = max_strategy_gap.max((worst - best).abs());
                checked += 1;
            }
        }
        v_game.push(cur_g);
        v_reduced.push(cur_r);
    }
    v_game.reverse();
    v_reduced.reverse();
    let max_value_gap =
        v_game.iter().flatten().zip(v_reduced.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(ReductionReport {
        v_game,
        v_reduced,
        max_value_gap,
        max_strategy_gap,
        strategies_checked: checked,
        infeasible_strategies: infeasible,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(n: usize, a: f64, b: f64) -> Vec<f64> {
        (0..n).map(|i| a + b * (-1.0 + 2.0 * i as f64 / (n - 1) as f64)).collect()
    }

    #[test]
    fn horizon_zero_returns_margin() {
        let l = linear(11, 0.1, 1.0);
        let inst = ReductionInstance::new(-1.0, 1.0, linear(11, 0.0, 1.0), vec![0.1; 11], l.clone(), 1.0, 0.3, 0, 5, 3)
            .unwrap();
        let r = check_reduction(&inst).unwrap();
        assert_eq!(r.v_game, vec![l.clone()]);
        assert_eq!(r.v_reduced, vec![l]);
    }

    #[test]
    fn zero_disturbance_is_identical() {
        let inst = ReductionInstance::new(
            -1.0,
            1.0,
            linear(21, 0.0, 1.0),
            vec![0.2; 21],
            linear(21, 0.0, 1.0).iter().map(|x| x * x - 0.3).collect(),
            1.0,
            0.0,
            4,
            7,
            1,
        )
        .unwrap();
        assert_eq!(inst.w_grid, inst.u_grid);
        let r = check_reduction(&inst).unwrap();
        assert_eq!(r.max_value_gap, 0.0);
    }

    #[test]
    fn random_monotone_instances_agree() {
        for seed in 0..50 {
            let inst = ReductionInstance::random(seed);
            let r = check_reduction(&inst).unwrap();
            assert!(r.max_value_gap <= 1e-9, "seed {seed}: gap {}", r.max_value_gap);
            assert!(r.max_strategy_gap <= 1e-9, "seed {seed}: strategy gap {}", r.max_strategy_gap);
            assert_eq!(r.infeasible_strategies, 0);
        }
    }

    #[test]
    fn non_monotone_value_breaks_equality() {
        // Margin peaked at the origin: the reduced player can steer onto the
        // peak, but in the game any u is answered by a push off it.
        let n = 41;
        let x = linear(n, 0.0, 1.0);
        let l: Vec<f64> = x.iter().map(|v| 0.5 - v.abs()).collect();
        let inst = ReductionInstance::new(-1.0, 1.0, x.clone(), vec![0.5; n], l, 1.0, 0.4, 1, 11, 3).unwrap();
        let r = check_reduction(&inst).unwrap();
        assert!(r.max_value_gap > 1e-3);
        for (g, red) in r.v_game[0].iter().zip(&r.v_reduced[0]) {
            assert!(g <= red);
        }
    }

    #[test]
    fn precondition_failures() {
        let l = linear(11, 0.1, 1.0);
        let make = |u: f64, d: f64| {
            ReductionInstance::new(-1.0, 1.0, linear(11, 0.0, 1.0), vec![0.1; 11], l.clone(), u, d, 2, 5, 3)
        };
        assert!(matches!(make(1.0, 1.0), Err(Error::Precondition(_))));
        assert!(matches!(make(1.0, 1.5), Err(Error::Precondition(_))));
        let mut inst = make(1.0, 0.3).unwrap();
        inst.w_grid = ReductionInstance::matched_w_grid(&inst.u_grid, &[-0.25, 0.0, 0.25], 0.7);
        assert!(matches!(check_reduction(&inst), Err(Error::Precondition(_))));
    }

    #[test]
    fn strategy_recovery_rule() {
        let s = RecoveredStrategy::from_w(0.4, 0.3);
        assert!((s.u - 0.7).abs() < 1e-15 && s.d == -0.3);
        let s = RecoveredStrategy::from_w(-0.4, 0.3);
        assert!((s.u + 0.7).abs() < 1e-15 && s.d == 0.3);
        assert_eq!(RecoveredStrategy::from_w(0.0, 0.3), RecoveredStrategy { w: 0.0, u: 0.0, d: 0.0 });
    }
}
