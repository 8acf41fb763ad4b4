//! Factorial experiment grids: expansion into seeded merge records and
//! resumable, failure-isolated execution.

mod config;
mod plan;
mod run;

pub use config::{GridConfig, Hyperparameters};
pub use plan::{expand_grid, select_expert_subset, ExperimentRecord, RecordStatus};
pub use run::{
    run_grid, Executor, MergeExecutor, RecordSummary, RunDir, RunOptions, RunOutcome, RunSummary,
};
