use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::normalize::{CellKey, NormalizedReport};

/// Mean over datasets for one category under one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    #[serde(flatten)]
    pub cell: CellKey,
    pub seed: u64,
    pub category_id: String,
    pub value: f64,
    pub n_datasets: usize,
}

/// Mean over categories for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    #[serde(flatten)]
    pub cell: CellKey,
    pub seed: u64,
    pub value: f64,
    pub n_categories: usize,
}

/// Mean over seeds: the value shown in a report cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    #[serde(flatten)]
    pub cell: CellKey,
    pub value: f64,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub categories: Vec<CategoryRow>,
    pub seeds: Vec<SeedRow>,
    /// Normalized rows left out for a missing or non-positive reference.
    pub excluded_rows: usize,
    /// Categories with no usable dataset after exclusions.
    pub dropped_categories: usize,
}

impl Summary {
    /// Builds a summary directly from final cell values.
    pub fn from_rows(mut rows: Vec<SummaryRow>) -> Self {
        rows.sort_by(|a, b| a.cell.cmp(&b.cell));
        Self {
            rows,
            ..Self::default()
        }
    }

    pub fn get(&self, cell: &CellKey) -> Option<f64> {
        self.rows.iter().find(|r| &r.cell == cell).map(|r| r.value)
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<(f64, usize)> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| (sum / n as f64, n))
}

/// Unweighted mean over datasets within each category, then over categories,
/// then over seeds. A category whose rows were all excluded is dropped and
/// counted; a seed or cell left without categories produces no row.
pub fn aggregate(report: &NormalizedReport) -> Summary {
    type Datasets = Vec<Option<f64>>;
    let mut tree: BTreeMap<&CellKey, BTreeMap<u64, BTreeMap<&str, Datasets>>> = BTreeMap::new();
    for row in &report.rows {
        tree.entry(&row.cell)
            .or_default()
            .entry(row.seed)
            .or_default()
            .entry(row.category_id.as_str())
            .or_default()
            .push(row.value);
    }

    let mut summary = Summary {
        excluded_rows: report.exclusions(),
        ..Summary::default()
    };
    for (cell, seeds) in tree {
        let mut seed_values = Vec::new();
        for (seed, categories) in seeds {
            let mut category_values = Vec::new();
            for (category, datasets) in categories {
                match mean(datasets.iter().flatten().copied()) {
                    Some((value, n_datasets)) => {
                        category_values.push(value);
                        summary.categories.push(CategoryRow {
                            cell: cell.clone(),
                            seed,
                            category_id: category.to_string(),
                            value,
                            n_datasets,
                        });
                    }
                    None => {
                        log::warn!("dropping category `{category}` (seed {seed}): every row was excluded");
                        summary.dropped_categories += 1;
                    }
                }
            }
            if let Some((value, n_categories)) = mean(category_values) {
                seed_values.push(value);
                summary.seeds.push(SeedRow {
                    cell: cell.clone(),
                    seed,
                    value,
                    n_categories,
                });
            }
        }
        if let Some((value, n_seeds)) = mean(seed_values) {
            summary.rows.push(SummaryRow {
                cell: cell.clone(),
                value,
                n_seeds,
            });
        }
    }
    summary
}
