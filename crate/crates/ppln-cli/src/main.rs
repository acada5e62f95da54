//! Command-line front end: reproducible runs of the library's generators,
//! fitting engine, trainers, and verification suites, emitting plot-ready
//! CSV/JSON plus a manifest per run.

mod commands;
mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

/// Exit codes: 0 success, 1 runtime failure, 2 usage error.
pub enum AppError {
    Usage(String),
    Runtime(ppln::Error),
}

impl From<ppln::Error> for AppError {
    fn from(e: ppln::Error) -> Self {
        AppError::Runtime(e)
    }
}

pub type AppResult<T> = Result<T, AppError>;

fn usage(msg: impl Into<String>) -> AppError {
    AppError::Usage(msg.into())
}

#[derive(Parser)]
#[command(
    name = "ppln",
    version,
    about = "Parametric piecewise-linear temporal nodes: data synthesis, fitting, training, verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a ground-truth segment set and noisy samples from it.
    Synth(commands::synth::SynthArgs),
    /// Fit a segment set to samples with the annealed descent engine.
    Fit(commands::fit::FitArgs),
    /// Run the two-segment normalization/smoothing demonstration.
    Toy(commands::toy::ToyArgs),
    /// Check every analytic gradient against finite differences.
    Gradcheck(commands::gradcheck::GradcheckArgs),
    /// Train a node network on a task or CSV dataset.
    Train(commands::train::TrainArgs),
    /// Train one variant per normalization/smoothing/segment combination.
    Ablate(commands::ablate::AblateArgs),
    /// Dump predicted coefficient curves for sampled inputs.
    Coeffs(commands::coeffs::CoeffsArgs),
}

/// Resolves the output directory: flag, then `PPLN_OUT`, then the cwd.
pub fn resolve_out_dir(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os("PPLN_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn run(cli: Cli) -> AppResult<()> {
    match cli.command {
        Command::Synth(args) => commands::synth::run(args),
        Command::Fit(args) => commands::fit::run(args),
        Command::Toy(args) => commands::toy::run(args),
        Command::Gradcheck(args) => commands::gradcheck::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Ablate(args) => commands::ablate::run(args),
        Command::Coeffs(args) => commands::coeffs::run(args),
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(AppError::Usage(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(2);
        }
        Err(AppError::Runtime(e)) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
