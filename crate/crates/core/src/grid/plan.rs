use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::GridConfig;
use crate::error::{Error, Result};
use crate::merge::{MergePlan, MergeRecipe, MethodKind, RecipeFile};
use crate::rng::CounterRng;

/// Seeded Fisher-Yates shuffle of `pool`, then the first `n` entries. The
/// selection for a smaller `n` is always a prefix of the one for a larger `n`.
pub fn select_expert_subset(seed: u64, n: usize, pool: &[String]) -> Result<Vec<String>> {
    if n == 0 || n > pool.len() {
        return Err(Error::invalid(
            "n",
            format!("must lie in 1..={}, got {n}", pool.len()),
        ));
    }
    let rng = CounterRng::new(seed).stream("expert-subset");
    let mut shuffled = pool.to_vec();
    for i in (1..shuffled.len()).rev() {
        let j = (rng.unit_at(i as u64) * (i + 1) as f64) as usize;
        shuffled.swap(i, j.min(i));
    }
    shuffled.truncate(n);
    Ok(shuffled)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Planned,
    Completed,
    Failed,
}

/// One cell of the grid, together with its execution state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    /// Content hash of the method, hyperparameters, model ids and seed.
    pub hash: String,
    pub base_model: String,
    pub size: String,
    pub method: MethodKind,
    pub n_experts: usize,
    pub seed: u64,
    pub selected_categories: Vec<String>,
    pub base_id: String,
    pub expert_ids: Vec<String>,
    /// Effective recipe with resolved checkpoint paths.
    pub recipe: RecipeFile,
    pub output_id: String,
    pub status: RecordStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at_ms: Option<u64>,
}

impl ExperimentRecord {
    pub fn plan(&self) -> Result<MergePlan> {
        self.recipe.validate()
    }

    pub fn merge_recipe(&self) -> Result<MergeRecipe> {
        MergeRecipe::new(self.plan()?.method, self.expert_ids.clone())
    }
}

fn record_hash(recipe: &RecipeFile, base_id: &str, expert_ids: &[String], seed: u64) -> String {
    let content = serde_json::json!({
        "method": recipe.method,
        "lambda": recipe.lambda,
        "trim_density": recipe.trim_density,
        "drop_p": recipe.drop_p,
        "rng_seed": recipe.rng_seed,
        "output_dtype": recipe.output_dtype,
        "base": base_id,
        "experts": expert_ids,
        "seed": seed,
    });
    hex::encode(Sha256::digest(content.to_string().as_bytes()))
}

/// All records of the factorial design, ordered by base model, size, method,
/// expert count and seed (last varies fastest).
pub fn expand_grid(config: &GridConfig) -> Result<Vec<ExperimentRecord>> {
    config.validate()?;
    let mut records = Vec::with_capacity(config.record_count());
    for base_model in &config.base_models {
        for size in &config.sizes {
            let base_id = format!("{base_model}/{size}/base");
            for &kind in &config.methods {
                for &n in &config.expert_counts {
                    for &seed in &config.seeds {
                        let selected = select_expert_subset(seed, n, &config.category_pool)?;
                        let expert_ids: Vec<String> =
                            selected.iter().map(|c| format!("{base_model}/{size}/{c}")).collect();
                        let recipe = MergePlan {
                            method: config.hyperparameters.method(kind, seed),
                            base: Some(config.base_path(base_model, size)),
                            experts: selected
                                .iter()
                                .map(|c| config.expert_path(base_model, size, c))
                                .collect(),
                            output_path: None,
                            output_dtype: config.output_dtype,
                        }
                        .to_recipe_file();
                        let hash = record_hash(&recipe, &base_id, &expert_ids, seed);
                        records.push(ExperimentRecord {
                            output_id: format!("merge-{}", &hash[..16]),
                            hash,
                            base_model: base_model.clone(),
                            size: size.clone(),
                            method: kind,
                            n_experts: n,
                            seed,
                            selected_categories: selected,
                            base_id: base_id.clone(),
                            expert_ids,
                            recipe,
                            status: RecordStatus::Planned,
                            error: None,
                            output_hash: None,
                            started_at_ms: None,
                            finished_at_ms: None,
                        });
                    }
                }
            }
        }
    }
    Ok(records)
}
