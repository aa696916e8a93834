//! Command-line experiment runner for the `diffmem` library.
//!
//! [`run`] parses arguments, resolves the configuration and dispatches to a
//! subcommand in [`commands`]; the binary only maps its result to an exit
//! code.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::{ExperimentConfig, RawConfig};
use crate::error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "diffmem", version, about = "Memorization experiments for diffusion models trained on noisy data")]
pub struct Cli {
    /// Experiment configuration (flat `key = value` file).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed, overriding `seed`.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory, overriding `output.dir`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one denoiser; writes a checkpoint and the loss curve.
    Train,
    /// Sample from a checkpoint with the probability-flow ODE.
    Sample {
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long = "stop-t")]
        stop_t: Option<f64>,
        /// Keep up to 64 snapshots of every trajectory.
        #[arg(long)]
        record: bool,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Memorization and quality metrics for a sample file.
    Eval,
    /// One training run per noise level, then the Pareto table.
    Sweep,
    /// Mutual information between clean and noisy training points.
    Mi,
    /// Subpopulation coefficients, weight tables and decomposition checks.
    Subpop,
    /// Total variation between two noised Gaussian components.
    Gmm,
}

/// Resolves the configuration for `cli`, applying flag overrides.
pub fn resolve(cli: &Cli) -> CliResult<ExperimentConfig> {
    let mut raw = match &cli.config {
        Some(path) => RawConfig::load(path)?,
        None => RawConfig::default(),
    };
    if let Some(seed) = cli.seed {
        raw.set("seed", seed.to_string())?;
    }
    if let Some(out) = &cli.out {
        raw.set("output.dir", out.to_string_lossy())?;
    }
    if let Command::Sample { steps, stop_t, record, checkpoint } = &cli.command {
        if let Some(s) = steps {
            raw.set("sample.steps", s.to_string())?;
        }
        if let Some(t) = stop_t {
            raw.set("sample.stop_t", t.to_string())?;
        }
        if *record {
            raw.set("sample.record", "true")?;
        }
        if let Some(p) = checkpoint {
            raw.set("sample.checkpoint", p.to_string_lossy())?;
        }
    }
    ExperimentConfig::from_raw(raw)
}

/// Runs a parsed command and returns the files it wrote.
pub fn execute(cli: &Cli) -> CliResult<Vec<PathBuf>> {
    let cfg = resolve(cli)?;
    let mut written = vec![commands::echo_config(&cfg)?];
    written.extend(match cli.command {
        Command::Train => commands::train(&cfg)?,
        Command::Sample { .. } => commands::sample(&cfg)?,
        Command::Eval => commands::eval(&cfg)?,
        Command::Sweep => commands::sweep(&cfg)?,
        Command::Mi => commands::mi(&cfg)?,
        Command::Subpop => commands::subpop(&cfg)?,
        Command::Gmm => commands::gmm(&cfg)?,
    });
    Ok(written)
}

/// Full entry point: returns the process exit code (0 success, 1 usage,
/// 2 runtime failure).
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
