//! `chase`: dataset synthesis, training, evaluation, discrepancy reports,
//! gradient checks and parameter accounting.
//!
//! Exit codes: 0 success, 1 check failure, 2 usage or configuration error,
//! 3 numerical failure.

mod commands;
mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }

    pub fn check(message: impl Into<String>) -> Self {
        CliError { code: 1, message: message.into() }
    }
}

impl From<chase_core::Error> for CliError {
    fn from(e: chase_core::Error) -> Self {
        CliError { code: if e.is_numerical() { 3 } else { 2 }, message: e.to_string() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Debug, Parser)]
#[command(name = "chase", version, about = "Sample-adaptive origin shifting for multi-entity skeletons")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Seed for every random draw; overrides the config file
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, created if missing
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// JSON config file for the command; flags override its values
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Suppress progress output on stderr
    #[arg(long, short, global = true)]
    pub quiet: bool,
    /// Name prefix for the files a command writes
    #[arg(long, global = true)]
    pub run_id: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic multi-entity dataset
    Synth(commands::SynthArgs),
    /// Train a classifier with the chosen normalizer
    Train(commands::TrainArgs),
    /// Clean and corrupted test accuracy of a checkpoint
    Eval(commands::EvalArgs),
    /// Inter-entity distribution discrepancy report
    Discrepancy(commands::DiscrepancyArgs),
    /// Finite-difference check of every differentiable operation
    Gradcheck(commands::GradcheckArgs),
    /// Parameter count and FLOP estimate of the coefficient block
    Params(commands::ParamsArgs),
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("CHASE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::usage(format!("CHASE_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::usage(format!("cannot configure thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|_| commands::run(cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
