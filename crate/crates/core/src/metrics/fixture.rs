//! Builds a consistent set of grid records and raw scores whose aggregated
//! report reproduces a given summary. Used to exercise the full
//! records -> scores -> report path against published cell values.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use super::aggregate::Summary;
use super::normalize::CellKey;
use super::scores::{ScoreRow, ScoreTable, Split};
use super::taxonomy::{held_in_ids, HELD_IN, HELD_OUT};
use crate::error::Result;
use crate::grid::{expand_grid, ExperimentRecord, GridConfig, RecordStatus, RunDir};
use crate::merge::MethodKind;
use crate::rng::CounterRng;

fn method_from_label(label: &str) -> Option<MethodKind> {
    MethodKind::ALL
        .into_iter()
        .find(|k| k.display_name() == label || k.id() == label)
}

/// Records and scores that aggregate back to `summary`. Rows whose method is
/// not a merge method (such as a multitask baseline) are skipped. Reference
/// scores vary per model and dataset; merged scores are the reference times
/// the target value, so every dataset, category and seed normalizes to the
/// cell value.
pub fn synthesize_run(summary: &Summary, seeds: &[u64]) -> Result<(Vec<ExperimentRecord>, ScoreTable)> {
    let rows: Vec<_> = summary
        .rows
        .iter()
        .filter(|r| method_from_label(&r.cell.method).is_some())
        .collect();
    let uniq = |f: &dyn Fn(&CellKey) -> String| -> Vec<String> {
        rows.iter().map(|r| f(&r.cell)).collect::<BTreeSet<_>>().into_iter().collect()
    };
    let config = GridConfig {
        base_models: uniq(&|c| c.base_model.clone()),
        sizes: uniq(&|c| c.size.clone()),
        methods: rows
            .iter()
            .filter_map(|r| method_from_label(&r.cell.method))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
        expert_counts: rows.iter().map(|r| r.cell.n_experts).collect::<BTreeSet<_>>().into_iter().collect(),
        seeds: seeds.to_vec(),
        category_pool: held_in_ids(),
        checkpoint_root: "checkpoints".into(),
        hyperparameters: Default::default(),
        output_dtype: None,
    };
    if rows.is_empty() {
        return Ok((Vec::new(), ScoreTable::default()));
    }
    let mut records = expand_grid(&config)?;
    let rng = CounterRng::new(0x5c0_7e5);
    let reference_score = |model: &str, dataset: &str, seed: u64| -> f64 {
        0.3 + 0.6 * rng.stream(model).stream(dataset).unit_at(seed)
    };

    let mut scores = Vec::new();
    let mut references = HashSet::new();
    let mut push_reference = |scores: &mut Vec<ScoreRow>, model: &str, dataset: &str, category: &str, split, seed| {
        if references.insert((model.to_string(), dataset.to_string(), seed)) {
            scores.push(ScoreRow {
                model_id: model.to_string(),
                dataset_id: dataset.to_string(),
                category_id: category.to_string(),
                split,
                seed,
                score: reference_score(model, dataset, seed),
            });
        }
    };
    for record in &mut records {
        record.status = RecordStatus::Completed;
        for split in [Split::HeldIn, Split::HeldOut] {
            let cell = CellKey {
                base_model: record.base_model.clone(),
                split,
                method: record.method.display_name().to_string(),
                size: record.size.clone(),
                n_experts: record.n_experts,
            };
            let Some(value) = summary.get(&cell) else {
                continue;
            };
            let targets: Vec<(String, &'static str, &'static [&'static str])> = match split {
                Split::HeldIn => record
                    .selected_categories
                    .iter()
                    .zip(&record.expert_ids)
                    .map(|(c, e)| {
                        let cat = HELD_IN.iter().find(|h| h.id == c).expect("pool is the held-in taxonomy");
                        (e.clone(), cat.id, cat.datasets)
                    })
                    .collect(),
                Split::HeldOut => HELD_OUT.iter().map(|c| (record.base_id.clone(), c.id, c.datasets)).collect(),
            };
            for (reference, category, datasets) in targets {
                for dataset in datasets {
                    push_reference(&mut scores, &reference, dataset, category, split, record.seed);
                    scores.push(ScoreRow {
                        model_id: record.output_id.clone(),
                        dataset_id: dataset.to_string(),
                        category_id: category.to_string(),
                        split,
                        seed: record.seed,
                        score: value * reference_score(&reference, dataset, record.seed),
                    });
                }
            }
        }
    }
    Ok((records, ScoreTable::new(scores)?))
}

/// Writes `records/<hash>.json` for each record under `run_dir`.
pub fn write_records(run_dir: impl AsRef<Path>, records: &[ExperimentRecord]) -> Result<()> {
    let dir = RunDir::new(run_dir.as_ref());
    for record in records {
        dir.write_record(record)?;
    }
    Ok(())
}
