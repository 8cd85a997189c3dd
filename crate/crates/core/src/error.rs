use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("rollout diverged at step {step}")]
    RolloutDiverged { step: usize },
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("world generation infeasible after {attempts} consecutive rejections")]
    GenerationInfeasible { attempts: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("solver failed: {0}")]
    SolverFailed(String),
    #[error("value iteration did not converge after {iterations} sweeps (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
