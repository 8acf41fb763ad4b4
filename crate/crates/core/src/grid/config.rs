use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dtype::Dtype;
use crate::error::{Error, Result};
use crate::merge::{MergeMethod, MethodKind};

/// Hyperparameters shared by every record of a grid. Unset values take the
/// method defaults; an unset `rng_seed` uses the record's grid seed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparameters {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trim_density: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drop_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng_seed: Option<u64>,
}

impl Hyperparameters {
    pub fn method(&self, kind: MethodKind, grid_seed: u64) -> MergeMethod {
        match kind.with_defaults() {
            MergeMethod::Average => MergeMethod::Average,
            MergeMethod::TaskArithmetic { lambda } => MergeMethod::TaskArithmetic {
                lambda: self.lambda.unwrap_or(lambda),
            },
            MergeMethod::Ties { lambda, density } => MergeMethod::Ties {
                lambda: self.lambda.unwrap_or(lambda),
                density: self.trim_density.unwrap_or(density),
            },
            MergeMethod::DareTies {
                lambda,
                density,
                drop_p,
                ..
            } => MergeMethod::DareTies {
                lambda: self.lambda.unwrap_or(lambda),
                density: self.trim_density.unwrap_or(density),
                drop_p: self.drop_p.unwrap_or(drop_p),
                seed: self.rng_seed.unwrap_or(grid_seed),
            },
        }
    }
}

/// Factorial experiment design. Checkpoints are looked up as
/// `<checkpoint_root>/<base_model>/<size>/base` and
/// `<checkpoint_root>/<base_model>/<size>/experts/<category>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub base_models: Vec<String>,
    pub sizes: Vec<String>,
    pub methods: Vec<MethodKind>,
    pub expert_counts: Vec<usize>,
    pub seeds: Vec<u64>,
    pub category_pool: Vec<String>,
    #[serde(default = "default_root")]
    pub checkpoint_root: PathBuf,
    #[serde(default)]
    pub hyperparameters: Hyperparameters,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dtype: Option<Dtype>,
}

fn default_root() -> PathBuf {
    PathBuf::from(".")
}

impl GridConfig {
    /// Reads a config; a relative `checkpoint_root` is resolved against the
    /// config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading grid config {}", path.display()), e))?;
        let mut config: GridConfig =
            serde_json::from_slice(&bytes).map_err(|e| Error::json(format!("parsing grid config {}", path.display()), e))?;
        if config.checkpoint_root.is_relative() {
            let dir = path.parent().unwrap_or_else(|| Path::new("."));
            config.checkpoint_root = dir.join(&config.checkpoint_root);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let axes = [
            ("base_models", self.base_models.len()),
            ("sizes", self.sizes.len()),
            ("methods", self.methods.len()),
            ("expert_counts", self.expert_counts.len()),
            ("seeds", self.seeds.len()),
            ("category_pool", self.category_pool.len()),
        ];
        for (name, len) in axes {
            if len == 0 {
                return Err(Error::InvalidConfig(format!("axis `{name}` is empty")));
            }
        }
        for &n in &self.expert_counts {
            if n == 0 || n > self.category_pool.len() {
                return Err(Error::InvalidConfig(format!(
                    "expert count {n} must lie in 1..={} (size of category_pool)",
                    self.category_pool.len()
                )));
            }
        }
        if let Some(d) = first_duplicate(self.seeds.iter()) {
            return Err(Error::InvalidConfig(format!("seed {d} appears more than once")));
        }
        if let Some(d) = first_duplicate(self.category_pool.iter()) {
            return Err(Error::InvalidConfig(format!("category `{d}` appears more than once")));
        }
        for kind in &self.methods {
            self.hyperparameters.method(*kind, 0).validate()?;
        }
        Ok(())
    }

    /// Number of records `expand_grid` produces.
    pub fn record_count(&self) -> usize {
        self.base_models.len() * self.sizes.len() * self.methods.len() * self.expert_counts.len() * self.seeds.len()
    }

    pub fn base_path(&self, base_model: &str, size: &str) -> PathBuf {
        self.checkpoint_root.join(base_model).join(size).join("base")
    }

    pub fn expert_path(&self, base_model: &str, size: &str, category: &str) -> PathBuf {
        self.checkpoint_root
            .join(base_model)
            .join(size)
            .join("experts")
            .join(category)
    }
}

fn first_duplicate<T: std::hash::Hash + Eq + Clone>(items: impl Iterator<Item = T>) -> Option<T> {
    let mut seen = HashSet::new();
    items.into_iter().find(|i| !seen.insert(i.clone()))
}
