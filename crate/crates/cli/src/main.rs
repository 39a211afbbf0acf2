//! `dtscr` — discrete-time survival analysis with competing events.
//!
//! Subcommands: `simulate`, `fit`, `predict`, `evaluate`, `screen`,
//! `compare`. Every stochastic path takes an explicit seed and produces
//! byte-identical outputs for a fixed seed regardless of worker count
//! (timestamps in the run manifest aside). Exit codes: 0 success, 1 runtime
//! estimation failure, 2 input or validation error.

mod commands;
mod util;

use clap::{Args, Parser, Subcommand};
use dtscr_core::Error;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "dtscr", version, about = "Discrete-time survival analysis with competing events")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Bound internal parallelism (fallback: DTSCR_WORKERS, then all cores).
    #[arg(long, value_name = "K")]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample datasets from a published setting and run replication studies.
    Simulate(commands::simulate::SimulateArgs),
    /// Fit a model to a dataset CSV, optionally with a penalized first step.
    Fit(commands::fit::FitArgs),
    /// Per-subject cumulative incidence curves from a fitted model.
    Predict(commands::predict::PredictArgs),
    /// Discrimination and calibration metrics of a model on a dataset.
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Marginal screening with a permutation threshold, optionally
    /// followed by the lasso.
    Screen(commands::screen::ScreenArgs),
    /// Side-by-side comparison of the two estimators.
    Compare(commands::compare::CompareArgs),
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(args) => commands::simulate::run(args),
        Command::Fit(args) => commands::fit::run(args),
        Command::Predict(args) => commands::predict::run(args),
        Command::Evaluate(args) => commands::evaluate::run(args),
        Command::Screen(args) => commands::screen::run(args),
        Command::Compare(args) => commands::compare::run(args),
    };
    if let Err(err) = outcome {
        let category = match &err {
            Error::Validation(_) => "validation",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::Estimation(_) => "estimation",
            Error::PenalizedNonConvergence { .. } => "non_convergence",
        };
        let payload = serde_json::json!({
            "error": category,
            "message": err.to_string(),
        });
        eprintln!("{payload}");
        std::process::exit(if err.is_input_error() { 2 } else { 1 });
    }
}
