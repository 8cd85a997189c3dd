use std::path::PathBuf;

use thiserror::Error;

/// Failures surfaced by the command-line front end, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// The config is malformed or violates a module invariant. `at` names the
    /// offending config path, e.g. `collect.num_demos`.
    #[error("config error at {at}: {message}")]
    Config { at: String, message: String },
    #[error("numerical failure: {0}")]
    Numerical(mpcguide::Error),
    #[error("missing artifact {}: {reason}", path.display())]
    MissingArtifact { path: PathBuf, reason: String },
    #[error(transparent)]
    Core(mpcguide::Error),
    #[error("i/o error on {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn config(at: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config { at: at.into(), message: message.into() }
    }

    /// Process exit code: 2 config, 3 numerical, 4 missing artifact, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Numerical(_) => 3,
            CliError::MissingArtifact { .. } => 4,
            CliError::Core(_) | CliError::Io { .. } => 1,
        }
    }

    /// Classifies a library error raised while working on config section `at`.
    pub fn from_core(at: &str, e: mpcguide::Error) -> Self {
        use mpcguide::Error as E;
        match e {
            E::Config(m) | E::Precondition(m) => CliError::config(at, m),
            E::GenerationInfeasible { .. } => CliError::config(at, e.to_string()),
            E::RolloutDiverged { .. } | E::NotConverged { .. } | E::SolverFailed(_) | E::TrainingDiverged { .. } => {
                CliError::Numerical(e)
            }
            other => CliError::Core(other),
        }
    }
}
