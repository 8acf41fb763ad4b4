use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "held_in", alias = "held-in")]
    HeldIn,
    #[serde(rename = "held_out", alias = "held-out")]
    HeldOut,
}

impl Split {
    pub fn id(self) -> &'static str {
        match self {
            Split::HeldIn => "held_in",
            Split::HeldOut => "held_out",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// One raw evaluation result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub model_id: String,
    pub dataset_id: String,
    pub category_id: String,
    pub split: Split,
    pub seed: u64,
    pub score: f64,
}

/// How a normalization reference row was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMatch {
    /// The reference model was scored under the same seed.
    SameSeed,
    /// The reference model has exactly one score for the dataset, used for every seed.
    Unique,
}

/// Raw scores, unique per `(model_id, dataset_id, seed)`.
#[derive(Debug, Clone, Default)]
pub struct ScoreTable {
    rows: Vec<ScoreRow>,
    by_model: HashMap<String, Vec<usize>>,
}

impl ScoreTable {
    pub fn new(rows: Vec<ScoreRow>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut by_model: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, row) in rows.iter().enumerate() {
            if !row.score.is_finite() {
                return Err(Error::invalid(
                    "score",
                    format!("non-finite score for ({}, {}, seed {})", row.model_id, row.dataset_id, row.seed),
                ));
            }
            if !seen.insert((row.model_id.as_str(), row.dataset_id.as_str(), row.seed)) {
                return Err(Error::invalid(
                    "scores",
                    format!("duplicate row for ({}, {}, seed {})", row.model_id, row.dataset_id, row.seed),
                ));
            }
            by_model.entry(row.model_id.clone()).or_default().push(i);
        }
        Ok(Self { rows, by_model })
    }

    /// Reads CSV with header `model_id,dataset_id,category_id,split,seed,score`.
    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut csv = csv::Reader::from_reader(reader);
        let rows = csv
            .deserialize()
            .collect::<std::result::Result<Vec<ScoreRow>, _>>()
            .map_err(|e| Error::csv("parsing scores", e))?;
        Self::new(rows)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(format!("opening scores {}", path.display()), e))?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        for row in &self.rows {
            csv.serialize(row).map_err(|e| Error::csv("writing scores", e))?;
        }
        csv.flush().map_err(|e| Error::io("writing scores", e))
    }

    pub fn rows(&self) -> &[ScoreRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows_for<'a>(&'a self, model_id: &str) -> impl Iterator<Item = &'a ScoreRow> + 'a {
        self.by_model
            .get(model_id)
            .into_iter()
            .flatten()
            .map(move |&i| &self.rows[i])
    }

    /// Reference score of `model_id` on `dataset_id` for `seed`: the
    /// same-seed row if present, otherwise the model's only row for the
    /// dataset. `None` when absent or ambiguous.
    pub fn reference(&self, model_id: &str, dataset_id: &str, seed: u64) -> Option<(&ScoreRow, ReferenceMatch)> {
        let mut candidates = self.rows_for(model_id).filter(|r| r.dataset_id == dataset_id);
        let all: Vec<&ScoreRow> = candidates.by_ref().collect();
        if let Some(row) = all.iter().find(|r| r.seed == seed) {
            return Some((row, ReferenceMatch::SameSeed));
        }
        match all.as_slice() {
            [only] => Some((only, ReferenceMatch::Unique)),
            _ => None,
        }
    }
}
