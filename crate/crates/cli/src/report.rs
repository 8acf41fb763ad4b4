use std::fs::{self, File};
use std::path::PathBuf;

use clap::Args;
use tvmerge_core::grid::RunDir;
use tvmerge_core::metrics::{aggregate, emit_report, normalize_run, read_reported_table, ReportFormat, ScoreTable};

use crate::error::CliError;

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Grid run directory holding `records/`.
    #[arg(long, required_unless_present = "table", requires = "scores")]
    run_dir: Option<PathBuf>,
    /// Score CSV: model_id, dataset_id, category_id, split, seed, score.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Re-render an already aggregated long-form table
    /// (base_model, split, method, size, n_experts, value) instead.
    #[arg(long, conflicts_with_all = ["run_dir", "scores"])]
    table: Option<PathBuf>,
    /// markdown or csv.
    #[arg(long, default_value = "markdown")]
    format: ReportFormat,
    /// Write the report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also write every normalized row, with its reference, as JSON.
    #[arg(long)]
    normalized: Option<PathBuf>,
}

pub fn run(args: ReportArgs) -> Result<(), CliError> {
    let summary = if let Some(table) = &args.table {
        let file = File::open(table).map_err(|e| CliError::io(format!("opening {}", table.display()), e))?;
        read_reported_table(file)?
    } else {
        let run_dir = RunDir::new(args.run_dir.clone().expect("required by clap"));
        let records = run_dir.load_records()?;
        let scores = ScoreTable::load(args.scores.as_ref().expect("required by clap"))?;
        let report = normalize_run(&records, &scores);
        if let Some(path) = &args.normalized {
            let json = serde_json::to_vec_pretty(&report).expect("report serializes");
            fs::write(path, json).map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
        }
        let excluded = report.exclusions();
        if excluded > 0 {
            log::warn!("{excluded} normalized rows excluded (missing or non-positive reference)");
        }
        aggregate(&report)
    };
    let text = emit_report(&summary, args.format);
    match &args.output {
        Some(path) => fs::write(path, text).map_err(|e| CliError::io(format!("writing {}", path.display()), e))?,
        None => print!("{text}"),
    }
    Ok(())
}
