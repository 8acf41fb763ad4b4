//! Normalized performance: per-row normalization against the expert (held-in)
//! or base model (held-out), three-level aggregation (datasets within a
//! category, then categories, then seeds) and table rendering.

mod aggregate;
pub mod fixture;
mod normalize;
mod report;
mod scores;
pub mod taxonomy;

pub use aggregate::{aggregate, CategoryRow, SeedRow, Summary, SummaryRow};
pub use normalize::{
    normalize_held_in, normalize_held_out, normalize_run, CellKey, NonPositiveReference, NormalizedReport,
    NormalizedRow,
};
pub use report::{emit_report, format_value, read_reported_table, write_report, ReportFormat};
pub use scores::{ReferenceMatch, ScoreRow, ScoreTable, Split};
