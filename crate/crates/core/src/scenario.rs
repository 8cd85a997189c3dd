//! Built-in tasks: which model, which worlds, where rollouts start, who the
//! expert is and what the learned policy observes.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Dubins, Model, Quad4d, State};
use crate::error::{Error, Result};
use crate::expert::LatticeExpert;
use crate::seed;
use crate::world::{generate_world, Bounds, Circle, GenerationSpec, Goal, ScanConfig, World};

/// Where the world of the `k`-th demonstration or rollout comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorldSource {
    Fixed { world: World },
    Generated { spec: GenerationSpec, seed: u64 },
}

impl WorldSource {
    pub fn world_for(&self, index: u64) -> Result<World> {
        match self {
            WorldSource::Fixed { world } => Ok(world.clone()),
            WorldSource::Generated { spec, seed } => generate_world(seed::derive_indexed(*seed, "world", index), spec),
        }
    }

    /// Same source family on a disjoint seed range.
    pub fn held_out(&self, salt: u64) -> Self {
        match self {
            WorldSource::Fixed { .. } => self.clone(),
            WorldSource::Generated { spec, seed } => {
                WorldSource::Generated { spec: spec.clone(), seed: seed::derive(*seed ^ salt, "held-out") }
            }
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        match self {
            WorldSource::Fixed { .. } => self.clone(),
            WorldSource::Generated { spec, .. } => WorldSource::Generated { spec: spec.clone(), seed },
        }
    }
}

/// Initial-state distribution: fixed `x`, lateral position uniform in `y_range`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StartDistribution {
    Dubins { x: f64, y_range: (f64, f64), heading: f64 },
    Quad { x: f64, y_range: (f64, f64), vx: f64 },
}

impl StartDistribution {
    pub fn state_at(&self, y: f64) -> State {
        match *self {
            StartDistribution::Dubins { x, heading, .. } => State(vec![x, y, heading]),
            StartDistribution::Quad { x, vx, .. } => State(vec![x, y, vx, 0.0]),
        }
    }

    pub fn y_range(&self) -> (f64, f64) {
        match *self {
            StartDistribution::Dubins { y_range, .. } | StartDistribution::Quad { y_range, .. } => y_range,
        }
    }

    /// Samples a collision-free start.
    pub fn sample<R: Rng>(&self, rng: &mut R, world: &World) -> Result<State> {
        let (lo, hi) = self.y_range();
        for _ in 0..1000 {
            let s = self.state_at(lo + (hi - lo) * rng.random::<f64>());
            if world.signed_distance([s[0], s[1]]) > 0.0 {
                return Ok(s);
            }
        }
        Err(Error::Config("start distribution lies inside obstacles".into()))
    }
}

/// What a learned policy observes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObservationMap {
    /// `(p_x, p_y, cos θ, sin θ, goal − p)`.
    DubinsState,
    /// Normalized range readings followed by `(v_x, v_y)`.
    QuadRanges { scan: ScanConfig },
}

impl ObservationMap {
    pub fn dim(&self) -> usize {
        match self {
            ObservationMap::DubinsState => 6,
            ObservationMap::QuadRanges { scan } => scan.ray_angles.len() + 2,
        }
    }

    pub fn schema_id(&self) -> String {
        match self {
            ObservationMap::DubinsState => "dubins_state_goal".into(),
            ObservationMap::QuadRanges { scan } => format!("ranges{}_velocity", scan.ray_angles.len()),
        }
    }

    pub fn observe(&self, world: &World, x: &[f64]) -> Vec<f64> {
        match self {
            ObservationMap::DubinsState => {
                let (gx, gy) = match *world.goal() {
                    Goal::Disk { x, y, .. } => (x, y),
                    Goal::Line { x } => (x, 0.0),
                };
                let (s, c) = x[2].sin_cos();
                vec![x[0], x[1], c, s, gx - x[0], gy - x[1]]
            }
            ObservationMap::QuadRanges { scan } => {
                let mut obs: Vec<f64> = match world.raycast([x[0], x[1]], 0.0, scan) {
                    Ok(r) => r.normalized().collect(),
                    // Inside an obstacle every ray is blocked.
                    Err(_) => vec![0.0; scan.ray_angles.len()],
                };
                obs.extend_from_slice(&x[2..4]);
                obs
            }
        }
    }
}

/// A complete task definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub model: Model,
    pub worlds: WorldSource,
    pub start: StartDistribution,
    pub expert: LatticeExpert,
    pub observation: ObservationMap,
    /// Demonstration length `T`.
    pub demo_length: usize,
}

impl Scenario {
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "dubins_corridor" => Ok(Self::dubins_corridor()),
            "quad_forest" => Ok(Self::quad_forest(0)),
            other => Err(Error::Config(format!("unknown scenario {other:?}"))),
        }
    }

    /// Fixed obstacle field: start at `x = 0` with `y ~ U[-2, 2]`, reach the
    /// disk goal at `(10, 0)`.
    pub fn dubins_corridor() -> Self {
        let model = Model::Dubins(Dubins::default());
        Self {
            name: "dubins_corridor".into(),
            expert: LatticeExpert::dubins(model.clone()),
            model,
            worlds: WorldSource::Fixed { world: corridor_world() },
            start: StartDistribution::Dubins { x: 0.0, y_range: (-2.0, 2.0), heading: 0.0 },
            observation: ObservationMap::DubinsState,
            demo_length: 200,
        }
    }

    /// Random cylinder fields; fly from `x = 0` past the 4 m mark.
    pub fn quad_forest(world_seed: u64) -> Self {
        let model = Model::Quad4d(Quad4d::default());
        Self {
            name: "quad_forest".into(),
            expert: LatticeExpert::quad4d(model.clone()),
            model,
            worlds: WorldSource::Generated { spec: GenerationSpec::quadrotor(), seed: world_seed },
            start: StartDistribution::Quad { x: 0.0, y_range: (0.5, 4.5), vx: 1.0 },
            observation: ObservationMap::QuadRanges { scan: ScanConfig::tof8() },
            demo_length: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.expert.model != self.model {
            return Err(Error::Config("expert model differs from the scenario model".into()));
        }
        if self.demo_length == 0 {
            return Err(Error::Config("demo_length must be at least 1".into()));
        }
        let (lo, hi) = self.start.y_range();
        if !(lo <= hi) {
            return Err(Error::Config("start y_range is empty".into()));
        }
        Ok(())
    }
}

/// The obstacle field used by the Dubins imitation task.
pub fn corridor_world() -> World {
    World::new(
        vec![
            Circle::new(3.0, 1.2, 0.7),
            Circle::new(3.2, -1.3, 0.6),
            Circle::new(5.2, 0.1, 0.8),
            Circle::new(7.3, 1.5, 0.6),
            Circle::new(7.4, -1.2, 0.7),
        ],
        Goal::Disk { x: 10.0, y: 0.0, r: 1.0 },
        Bounds::new(-1.0, 11.0, -4.0, 4.0),
    )
    .expect("corridor world is valid")
}

/// Two-obstacle field for the disturbance-field comparison, on the grid
/// domain `[0, 6] × [-3, 3] × (-π, π]`.
pub fn verification_world() -> World {
    World::new(
        vec![Circle::new(3.0, 1.2, 0.8), Circle::new(3.6, -1.1, 0.7)],
        Goal::Disk { x: 5.5, y: 0.0, r: 0.3 },
        Bounds::new(0.0, 6.0, -3.0, 3.0),
    )
    .expect("verification world is valid")
}

pub const VERIFICATION_THETA: (f64, f64) = (-PI, PI);
