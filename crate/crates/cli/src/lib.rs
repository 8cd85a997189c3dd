//! Library side of the `mpcguide` command: run configuration, subcommands
//! and their exit-code mapping.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{Options, Outcome, ReportFormat};
pub use config::RunConfig;
pub use error::{CliError, CliResult};
