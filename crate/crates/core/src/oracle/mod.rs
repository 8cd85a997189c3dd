//! Ground-truth tools: a grid-based robust value function for checking the
//! sampled disturbance field, and a checker for the game-to-maximization
//! reduction.

mod grid;
mod reduction;

pub use grid::{
    disturbance_field_mse, oracle_disturbance, value_iteration, Axis, GridSpec, MseReport, OracleDisturbance,
    RobustValueIteration, ValueGrid, GRADIENT_EPS,
};
pub use reduction::{check_reduction, RecoveredStrategy, ReductionInstance, ReductionReport};
