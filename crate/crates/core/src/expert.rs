//! Controllers: the trait shared by experts and learned policies, and the
//! built-in lattice MPC experts.

use serde::{Deserialize, Serialize};

use crate::dynamics::{Dynamics, Model};
use crate::world::{Goal, World};

/// State-feedback controller. Controllers see the world so that sensor-based
/// policies can synthesize their observations and privileged experts can plan.
pub trait Controller: Send + Sync {
    fn act(&self, world: &World, x: &[f64]) -> Vec<f64>;
}

impl<C: Controller + ?Sized> Controller for &C {
    fn act(&self, world: &World, x: &[f64]) -> Vec<f64> {
        (**self).act(world, x)
    }
}

/// Holds a fixed action regardless of state.
#[derive(Debug, Clone)]
pub struct ConstantController(pub Vec<f64>);

impl Controller for ConstantController {
    fn act(&self, _world: &World, _x: &[f64]) -> Vec<f64> {
        self.0.clone()
    }
}

/// Two-segment motion-primitive planner.
///
/// Every pair (first, second) of candidate inputs is rolled out: `first` for
/// `switch_step` steps, then `second` until `horizon`. The pair with the
/// lowest goal-plus-clearance cost wins and its first input is applied.
/// Fully deterministic, so labels can be re-evaluated exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeExpert {
    pub model: Model,
    pub horizon: usize,
    pub switch_step: usize,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    /// Clearance below which the plan is penalized, m.
    pub margin: f64,
    pub clearance_weight: f64,
    /// Reference speed for models with velocity states.
    #[serde(default)]
    pub speed_ref: f64,
    #[serde(default)]
    pub speed_weight: f64,
    /// Quadratic input penalty, averaged over the horizon.
    #[serde(default)]
    pub effort_weight: f64,
}

const EFFORT_WEIGHT: f64 = 0.3;

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

impl LatticeExpert {
    pub fn dubins(model: Model) -> Self {
        let b = model.control_bound()[0];
        Self {
            model,
            horizon: 20,
            switch_step: 5,
            first: linspace(-b, b, 21).into_iter().map(|w| vec![w]).collect(),
            second: linspace(-b, b, 5).into_iter().map(|w| vec![w]).collect(),
            margin: 0.35,
            clearance_weight: 20.0,
            speed_ref: 0.0,
            speed_weight: 0.0,
            effort_weight: EFFORT_WEIGHT,
        }
    }

    pub fn quad4d(model: Model) -> Self {
        let b = model.control_bound()[0];
        let grid = |n| {
            let g = linspace(-b, b, n);
            g.iter().flat_map(|&p| g.iter().map(move |&r| vec![p, r])).collect::<Vec<_>>()
        };
        Self {
            model,
            horizon: 30,
            switch_step: 10,
            first: grid(5),
            second: grid(3),
            margin: 0.3,
            clearance_weight: 20.0,
            speed_ref: 1.0,
            speed_weight: 0.5,
            effort_weight: 0.0,
        }
    }

    fn goal_cost(goal: &Goal, p: [f64; 2]) -> f64 {
        match *goal {
            Goal::Disk { x, y, .. } => (p[0] - x).hypot(p[1] - y),
            Goal::Line { x } => (x - p[0]).max(0.0),
        }
    }

    fn plan_cost(&self, world: &World, x: &[f64], first: &[f64], second: &[f64]) -> f64 {
        let nx = self.model.state_dim();
        let mut cur = x.to_vec();
        let mut next = vec![0.0; nx];
        let mut penalty = 0.0;
        let mut best_goal = f64::INFINITY;
        let mut effort = 0.0;
        for k in 0..self.horizon {
            let u = if k < self.switch_step { first } else { second };
            effort += u.iter().map(|v| v * v).sum::<f64>();
            self.model.step_into(&cur, u, &mut next);
            std::mem::swap(&mut cur, &mut next);
            let p = self.model.position(&cur);
            let l = world.signed_distance(p);
            if l <= 0.0 {
                // Collisions dominate everything else; earlier is worse.
                penalty += 1e3 * (self.horizon - k) as f64;
                break;
            }
            if l < self.margin {
                penalty += self.clearance_weight * (self.margin - l);
            }
            // Progress discounted slightly by time so the planner prefers getting there sooner.
            best_goal = best_goal.min(Self::goal_cost(world.goal(), p) + 0.01 * k as f64);
            if world.is_at_goal(p) {
                break;
            }
        }
        let speed = if self.speed_weight > 0.0 && nx >= 4 {
            self.speed_weight * ((cur[2] - self.speed_ref).powi(2) + cur[3].powi(2))
        } else {
            0.0
        };
        best_goal + penalty + speed + self.effort_weight * effort / self.horizon as f64
    }
}

impl Controller for LatticeExpert {
    fn act(&self, world: &World, x: &[f64]) -> Vec<f64> {
        let mut best = (f64::INFINITY, 0usize);
        for (i, f) in self.first.iter().enumerate() {
            for s in &self.second {
                let c = self.plan_cost(world, x, f, s);
                if c < best.0 {
                    best = (c, i);
                }
            }
        }
        let mut u = self.first[best.1].clone();
        self.model.clamp_control(&mut u);
        u
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Dubins, Quad4d};
    use crate::world::{Bounds, Circle};

    #[test]
    fn dubins_expert_turns_toward_goal() {
        let model = Model::Dubins(Dubins::default());
        let e = LatticeExpert::dubins(model);
        let w = World::new(vec![], Goal::Disk { x: 0.0, y: 5.0, r: 0.5 }, Bounds::new(-5.0, 5.0, -5.0, 5.0)).unwrap();
        // Heading +x, goal straight up: turn left.
        assert!(e.act(&w, &[0.0, 0.0, 0.0])[0] > 0.0);
    }

    #[test]
    fn dubins_expert_avoids_obstacle_ahead() {
        let model = Model::Dubins(Dubins::default());
        let e = LatticeExpert::dubins(model);
        let w = World::new(
            vec![Circle::new(1.5, 0.05, 0.6)],
            Goal::Disk { x: 6.0, y: 0.0, r: 0.5 },
            Bounds::new(-5.0, 10.0, -5.0, 5.0),
        )
        .unwrap();
        let u = e.act(&w, &[0.0, 0.0, 0.0]);
        assert!(u[0] < 0.0, "expected a right turn around the obstacle, got {u:?}");
    }

    #[test]
    fn expert_outputs_within_bound_and_deterministic() {
        let model = Model::Quad4d(Quad4d::default());
        let e = LatticeExpert::quad4d(model);
        let w = crate::world::generate_world(5, &crate::world::GenerationSpec::quadrotor()).unwrap();
        for y in [0.6, 1.5, 2.5, 3.5, 4.4] {
            let x = [0.0, y, 1.0, 0.0];
            let a = e.act(&w, &x);
            assert!(a.iter().all(|v| v.abs() <= 0.1745));
            assert_eq!(a, e.act(&w, &x));
        }
    }
}
