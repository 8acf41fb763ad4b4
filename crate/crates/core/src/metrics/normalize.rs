use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::scores::{ReferenceMatch, ScoreTable, Split};
use crate::grid::{ExperimentRecord, RecordStatus};

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("non-positive reference score {0}")]
pub struct NonPositiveReference(pub f64);

fn ratio(merged: f64, reference: f64) -> Result<f64, NonPositiveReference> {
    if reference > 0.0 {
        Ok(merged / reference)
    } else {
        Err(NonPositiveReference(reference))
    }
}

/// Merged score relative to the expert trained on the task; 1 is parity.
pub fn normalize_held_in(merged_score: f64, expert_score: f64) -> Result<f64, NonPositiveReference> {
    ratio(merged_score, expert_score)
}

/// Merged score relative to the base model; above 1 is a gain.
pub fn normalize_held_out(merged_score: f64, base_score: f64) -> Result<f64, NonPositiveReference> {
    ratio(merged_score, base_score)
}

/// Identifies one cell of a report table.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub base_model: String,
    pub split: Split,
    pub method: String,
    pub size: String,
    pub n_experts: usize,
}

/// A normalized score together with the reference it was divided by.
/// `value` is `None` for excluded rows, with the reason in `exclusion`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedRow {
    #[serde(flatten)]
    pub cell: CellKey,
    pub seed: u64,
    pub category_id: String,
    pub dataset_id: String,
    pub merged_score: f64,
    pub reference_model: String,
    pub reference_score: Option<f64>,
    pub reference_seed: Option<u64>,
    pub reference_match: Option<ReferenceMatch>,
    pub value: Option<f64>,
    pub exclusion: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NormalizedReport {
    pub rows: Vec<NormalizedRow>,
}

impl NormalizedReport {
    pub fn exclusions(&self) -> usize {
        self.rows.iter().filter(|r| r.value.is_none()).count()
    }
}

/// Normalizes the scores of every completed record's merged model.
///
/// Held-in rows are limited to the record's selected categories and divided
/// by the matching expert's score; held-out rows are divided by the base
/// model's score. Rows whose reference is missing, ambiguous or non-positive
/// are kept with `value: None`.
pub fn normalize_run(records: &[ExperimentRecord], scores: &ScoreTable) -> NormalizedReport {
    let mut rows = Vec::new();
    for record in records.iter().filter(|r| r.status == RecordStatus::Completed) {
        for score in scores.rows_for(&record.output_id) {
            let reference_model = match score.split {
                Split::HeldIn => {
                    let Some(pos) = record.selected_categories.iter().position(|c| *c == score.category_id) else {
                        continue;
                    };
                    record.expert_ids[pos].clone()
                }
                Split::HeldOut => record.base_id.clone(),
            };
            let mut row = NormalizedRow {
                cell: CellKey {
                    base_model: record.base_model.clone(),
                    split: score.split,
                    method: record.method.display_name().to_string(),
                    size: record.size.clone(),
                    n_experts: record.n_experts,
                },
                seed: record.seed,
                category_id: score.category_id.clone(),
                dataset_id: score.dataset_id.clone(),
                merged_score: score.score,
                reference_model,
                reference_score: None,
                reference_seed: None,
                reference_match: None,
                value: None,
                exclusion: None,
            };
            match scores.reference(&row.reference_model, &score.dataset_id, record.seed) {
                None => row.exclusion = Some("no unambiguous reference score".into()),
                Some((reference, how)) => {
                    row.reference_score = Some(reference.score);
                    row.reference_seed = Some(reference.seed);
                    row.reference_match = Some(how);
                    let normalized = match score.split {
                        Split::HeldIn => normalize_held_in(score.score, reference.score),
                        Split::HeldOut => normalize_held_out(score.score, reference.score),
                    };
                    match normalized {
                        Ok(v) => row.value = Some(v),
                        Err(e) => row.exclusion = Some(e.to_string()),
                    }
                }
            }
            rows.push(row);
        }
    }
    let excluded = rows.iter().filter(|r| r.value.is_none()).count();
    if excluded > 0 {
        log::warn!("{excluded} score rows excluded from aggregation");
    }
    NormalizedReport { rows }
}
