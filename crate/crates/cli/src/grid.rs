use std::io::{self, Write};
use std::path::PathBuf;

use clap::Args;
use tvmerge_core::grid::{expand_grid, run_grid, GridConfig, MergeExecutor, RunOptions};

use crate::error::CliError;

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, required_unless_present = "plan_only")]
    run_dir: Option<PathBuf>,
    /// Skip records whose completed output already exists in the run directory.
    #[arg(long)]
    resume: bool,
    /// List the planned records and exit without merging.
    #[arg(long)]
    plan_only: bool,
    /// Concurrent merges; 0 uses every CPU.
    #[arg(long, env = "TVMERGE_WORKERS", default_value_t = 1)]
    workers: usize,
}

pub fn run(args: GridArgs) -> Result<(), CliError> {
    let config = GridConfig::load(&args.config)?;
    let records = expand_grid(&config)?;
    println!("planned\t{}", records.len());
    if args.plan_only {
        let mut out = io::stdout().lock();
        for r in &records {
            let written = writeln!(
                out,
                "record\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.hash,
                r.base_model,
                r.size,
                r.method,
                r.n_experts,
                r.seed,
                r.selected_categories.join(",")
            );
            match written {
                Ok(()) => {}
                // The reader went away (e.g. `| head`); nothing left to do.
                Err(e) if e.kind() == io::ErrorKind::BrokenPipe => return Ok(()),
                Err(e) => return Err(CliError::io("writing plan", e)),
            }
        }
        return Ok(());
    }
    let run_dir = args.run_dir.expect("required by clap unless plan-only");
    let options = RunOptions {
        resume: args.resume,
        workers: args.workers,
    };
    let outcome = run_grid(&records, &MergeExecutor::default(), &run_dir, &options)?;
    let s = &outcome.summary;
    println!("completed\t{}", s.completed);
    println!("failed\t{}", s.failed);
    println!("executed\t{}", outcome.executed);
    println!("skipped\t{}", outcome.skipped);
    for f in s.failures() {
        eprintln!("failed {}: {}", f.hash, f.error.as_deref().unwrap_or("unknown error"));
    }
    if s.failed > 0 {
        return Err(CliError::Partial(format!("{} of {} records failed", s.failed, s.planned)));
    }
    Ok(())
}
