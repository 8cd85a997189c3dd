use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mpcguide_cli::commands;
use mpcguide_cli::{CliError, CliResult, Options, ReportFormat, RunConfig};

/// Writes a line to stdout, ignoring a closed pipe.
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(name = "mpcguide", version, about = "Adversarially guided demonstration collection and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write per-solve MPPI diagnostics as JSON lines.
    #[arg(long, global = true)]
    diagnostics: bool,
    /// Report encodings for eval and experiment.
    #[arg(long, global = true, value_enum, default_value_t = Format::Both)]
    report: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Compare the sampled disturbance field with the grid oracle.
    Verify,
    /// Collect demonstrations.
    Collect,
    /// Train a policy on collected demonstrations.
    Train,
    /// Evaluate a saved policy on held-out rollouts.
    Eval,
    /// Collect, train and evaluate every configured condition.
    Experiment,
    /// Check the game-to-maximization reduction on 1D instances.
    CheckReduction,
    /// Generate a random obstacle field.
    GenWorld,
    /// Print the resolved run config.
    ShowConfig,
}

fn run(cli: Cli) -> CliResult<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = cli.out {
        config.out = out;
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config("--threads", e.to_string()))?;
    }
    let options = Options {
        diagnostics: cli.diagnostics,
        report: match cli.report {
            Format::Json => ReportFormat::Json,
            Format::Csv => ReportFormat::Csv,
            Format::Both => ReportFormat::Both,
        },
    };
    let outcome = match cli.command {
        Command::Verify => commands::verify(&config, &options)?,
        Command::Collect => commands::collect(&config)?,
        Command::Train => commands::train(&config)?,
        Command::Eval => commands::evaluate(&config, &options)?,
        Command::Experiment => commands::experiment(&config, &options)?,
        Command::CheckReduction => {
            let (outcome, results) = commands::check_reduction_cmd(&config)?;
            for r in &results {
                match (&r.error, r.max_value_gap) {
                    (Some(e), _) => say!("{}: REJECTED ({e})", r.label),
                    (None, Some(gap)) => {
                        say!("{}: max |V1 - V2| = {gap:.3e} {}", r.label, if r.pass { "PASS" } else { "FAIL" })
                    }
                    (None, None) => {}
                }
            }
            say!("{}", outcome.summary);
            return commands::reduction_status(&results);
        }
        Command::GenWorld => commands::gen_world(&config)?,
        Command::ShowConfig => {
            config.validate()?;
            say!("{}", config.to_json());
            return Ok(());
        }
    };
    say!("{}", outcome.summary);
    for a in &outcome.artifacts {
        log::info!("wrote {}", a.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
