//! Planar obstacle worlds: the failure set, its signed-distance margin,
//! goal predicates, range sensing and seeded random generation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Default range-sensor reach, m.
pub const DEFAULT_MAX_RANGE: f64 = 3.0;

/// Margin reported by a world with no obstacles.
pub const NO_OBSTACLE_DISTANCE: f64 = 10.0 * DEFAULT_MAX_RANGE;

/// Circular obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub x: f64,
    pub y: f64,
    pub r: f64,
}

impl Circle {
    pub fn new(x: f64, y: f64, r: f64) -> Self {
        Self { x, y, r }
    }

    #[inline]
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        (p[0] - self.x).hypot(p[1] - self.y) - self.r
    }
}

/// Goal region. Disk goals for Dubins tasks, finish lines (`p_x ≥ x`) for
/// quadrotor tasks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Goal {
    Disk { x: f64, y: f64, r: f64 },
    Line { x: f64 },
}

impl Goal {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        match *self {
            Goal::Disk { x, y, r } => (p[0] - x).hypot(p[1] - y) <= r,
            Goal::Line { x } => p[0] >= x,
        }
    }
}

/// Axis-aligned rectangle, m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Bounds {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Self { x_min, x_max, y_min, y_max }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x_min && p[0] <= self.x_max && p[1] >= self.y_min && p[1] <= self.y_max
    }

    /// Distance from `p` to the rectangle (zero inside).
    fn distance(&self, p: [f64; 2]) -> f64 {
        let dx = (self.x_min - p[0]).max(p[0] - self.x_max).max(0.0);
        let dy = (self.y_min - p[1]).max(p[1] - self.y_max).max(0.0);
        dx.hypot(dy)
    }
}

/// Obstacle environment. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    obstacles: Vec<Circle>,
    goal: Goal,
    bounds: Bounds,
}

impl World {
    pub fn new(obstacles: Vec<Circle>, goal: Goal, bounds: Bounds) -> Result<Self> {
        let w = Self { obstacles, goal, bounds };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, o) in self.obstacles.iter().enumerate() {
            if !(o.r > 0.0) || !o.x.is_finite() || !o.y.is_finite() {
                return Err(Error::Contract(format!("obstacle {i} has invalid geometry")));
            }
            if let Goal::Disk { x, y, r } = self.goal {
                if o.distance([x, y]) <= r {
                    return Err(Error::Contract(format!("obstacle {i} intersects the goal")));
                }
            }
        }
        Ok(())
    }

    pub fn obstacles(&self) -> &[Circle] {
        &self.obstacles
    }

    pub fn goal(&self) -> &Goal {
        &self.goal
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    /// Signed distance `l(p)` to the nearest obstacle boundary; negative inside.
    #[inline]
    pub fn signed_distance(&self, p: [f64; 2]) -> f64 {
        if self.obstacles.is_empty() {
            return NO_OBSTACLE_DISTANCE;
        }
        self.obstacles.iter().map(|o| o.distance(p)).fold(f64::INFINITY, f64::min)
    }

    /// Boundary points count as collisions.
    pub fn is_collision(&self, p: [f64; 2]) -> bool {
        self.signed_distance(p) <= 0.0
    }

    pub fn is_at_goal(&self, p: [f64; 2]) -> bool {
        self.goal.contains(p)
    }

    /// Closed-form ray–circle range readings. Ray angles are relative to `heading`.
    pub fn raycast(&self, origin: [f64; 2], heading: f64, scan: &ScanConfig) -> Result<RangeScan> {
        if self.is_collision(origin) {
            return Err(Error::InvalidQuery(format!(
                "raycast origin ({:.3}, {:.3}) lies inside an obstacle",
                origin[0], origin[1]
            )));
        }
        let distances = scan
            .ray_angles
            .iter()
            .map(|&a| {
                let (s, c) = (heading + a).sin_cos();
                self.obstacles.iter().filter_map(|o| ray_circle(origin, [c, s], o)).fold(scan.max_range, f64::min)
            })
            .collect();
        Ok(RangeScan { distances, ray_angles: scan.ray_angles.clone(), max_range: scan.max_range })
    }
}

/// First positive intersection distance of the ray `origin + t·dir` with `c`.
fn ray_circle(origin: [f64; 2], dir: [f64; 2], c: &Circle) -> Option<f64> {
    let ox = origin[0] - c.x;
    let oy = origin[1] - c.y;
    let b = ox * dir[0] + oy * dir[1];
    let cc = ox * ox + oy * oy - c.r * c.r;
    let disc = b * b - cc;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    // Numerically stable near root: t1·t2 = cc.
    let t = if b < 0.0 {
        let q = -b + sq;
        cc / q
    } else {
        -b - sq
    };
    (t > 0.0).then_some(t)
}

/// Ray layout of a range sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub ray_angles: Vec<f64>,
    pub max_range: f64,
}

impl ScanConfig {
    /// `n` rays evenly spaced around the full circle, starting straight ahead.
    pub fn uniform(n: usize, max_range: f64) -> Self {
        let ray_angles = (0..n).map(|i| i as f64 * std::f64::consts::TAU / n as f64).collect();
        Self { ray_angles, max_range }
    }

    /// The eight time-of-flight sensors of the quadrotor.
    pub fn tof8() -> Self {
        Self::uniform(8, DEFAULT_MAX_RANGE)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeScan {
    pub distances: Vec<f64>,
    pub ray_angles: Vec<f64>,
    pub max_range: f64,
}

impl RangeScan {
    /// Readings scaled to `[0, 1]` by the sensor reach.
    pub fn normalized(&self) -> impl Iterator<Item = f64> + '_ {
        self.distances.iter().map(move |d| d / self.max_range)
    }
}

/// Parameters for random obstacle fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSpec {
    /// Inclusive obstacle-count range.
    pub count: (usize, usize),
    pub center_x: (f64, f64),
    pub center_y: (f64, f64),
    pub radius: (f64, f64),
    pub goal: Goal,
    pub bounds: Bounds,
    /// Placements whose disk touches this region are resampled.
    pub start_region: Bounds,
    /// Extra clearance kept around the start region and a disk goal.
    #[serde(default)]
    pub clearance: f64,
}

impl GenerationSpec {
    /// Random cylinder fields of the quadrotor task.
    pub fn quadrotor() -> Self {
        Self {
            count: (1, 10),
            center_x: (0.5, 4.5),
            center_y: (0.5, 4.5),
            radius: (0.1, 0.8),
            goal: Goal::Line { x: 4.0 },
            bounds: Bounds::new(-0.5, 5.0, 0.0, 5.0),
            start_region: Bounds::new(-0.3, 0.3, 0.5, 4.5),
            clearance: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a <= b;
        if self.count.0 > self.count.1
            || !ordered(self.center_x)
            || !ordered(self.center_y)
            || !ordered(self.radius)
            || !(self.radius.0 > 0.0)
        {
            return Err(Error::Config("world generation ranges must be nonempty".into()));
        }
        Ok(())
    }
}

/// Maximum consecutive rejected placements before giving up.
pub const MAX_REJECTIONS: usize = 1000;

fn uniform_in<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Deterministic random world for `seed`.
pub fn generate_world(seed: u64, spec: &GenerationSpec) -> Result<World> {
    spec.validate()?;
    let mut rng = seed::stream_rng(seed, 0);
    let count = rng.random_range(spec.count.0..=spec.count.1);
    let mut obstacles = Vec::with_capacity(count);
    while obstacles.len() < count {
        let mut rejections = 0;
        loop {
            let c = Circle::new(
                uniform_in(&mut rng, spec.center_x),
                uniform_in(&mut rng, spec.center_y),
                uniform_in(&mut rng, spec.radius),
            );
            let covers_start = spec.start_region.distance([c.x, c.y]) <= c.r + spec.clearance;
            let covers_goal = match spec.goal {
                Goal::Disk { x, y, r } => c.distance([x, y]) <= r + spec.clearance,
                Goal::Line { .. } => false,
            };
            if !covers_start && !covers_goal {
                obstacles.push(c);
                break;
            }
            rejections += 1;
            if rejections >= MAX_REJECTIONS {
                return Err(Error::GenerationInfeasible { attempts: rejections });
            }
        }
    }
    World::new(obstacles, spec.goal, spec.bounds)
}
