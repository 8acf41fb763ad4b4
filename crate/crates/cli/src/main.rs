//! `tvmerge`: merge checkpoints, inspect task vectors, run experiment grids
//! and render normalized-score reports.
//!
//! Results go to stdout, progress and diagnostics to stderr. Exit status is 0
//! on success, 1 for errors caused by inputs (bad flags, recipes, configs or
//! checkpoints) and 2 for environment failures such as I/O errors.

mod diff;
mod error;
mod grid;
mod inspect;
mod merge;
mod report;
mod synth;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "tvmerge", version, about = "Task-vector checkpoint merging toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Merge expert checkpoints as described by a recipe file and/or flags.
    Merge(merge::MergeArgs),
    /// Per-tensor statistics of expert task vectors against a base.
    Diff(diff::DiffArgs),
    /// Print a checkpoint's manifest summary.
    Inspect(inspect::InspectArgs),
    /// Expand and run an experiment grid.
    Grid(grid::GridArgs),
    /// Normalize, aggregate and render scores for a grid run.
    Report(report::ReportArgs),
    /// Generate a synthetic base and expert family.
    Synth(synth::SynthArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Merge(args) => merge::run(args),
        Command::Diff(args) => diff::run(args),
        Command::Inspect(args) => inspect::run(args),
        Command::Grid(args) => grid::run(args),
        Command::Report(args) => report::run(args),
        Command::Synth(args) => synth::run(args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
