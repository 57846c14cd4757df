//! `gmoe`: simulate, fit, score and benchmark Gaussian-gated mixtures of experts.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 on domain or runtime errors.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Domain(gmoe::Error),
    Runtime(String),
}

impl From<gmoe::Error> for CliError {
    fn from(e: gmoe::Error) -> Self {
        CliError::Domain(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Domain(_) | CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Domain(e) => write!(f, "error: {e}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gmoe", version, about = "Gaussian-gated mixture of experts toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. File values are overridden by flags,
/// which are overridden by `--set`.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment config JSON (a previous manifest.json also works).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Sample-size grid and replication preset: desk or paper.
    #[arg(long, global = true)]
    pub profile: Option<String>,
    /// Base seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for sweeps and searches.
    #[arg(long, global = true, env = "GMOE_THREADS")]
    pub threads: Option<usize>,
    /// Directory for artifacts and the manifest.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// dbar, dtilde or auto.
    #[arg(long, global = true)]
    pub loss: Option<String>,
    /// Number of fitted atoms.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Preset name (model1..model4).
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Config override `key=value`; nested keys use dots, e.g. `em.max_iter=500`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a dataset from a preset or inline measure.
    Simulate(commands::SimulateArgs),
    /// Fit a mixture to a dataset by EM.
    Fit(commands::FitArgs),
    /// Voronoi loss (and optionally TV distance) between a fitted and a true measure.
    Loss(commands::LossArgs),
    /// Sample-size sweep: results.csv, summary.csv, rate.json, plot.svg.
    Sweep(commands::SweepArgs),
    /// Refit the log-log rate of an existing summary.csv.
    Rate(commands::RateArgs),
    /// Residuals, verification and multi-start search for the polynomial systems.
    Polysys(commands::PolysysArgs),
    /// Print a preset measure, or list the presets.
    Presets(commands::PresetsArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Fit(a) => commands::fit(a),
        Command::Loss(a) => commands::loss(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Rate(a) => commands::rate(a),
        Command::Polysys(a) => commands::polysys(a),
        Command::Presets(a) => commands::presets(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
