use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use tvmerge_core::merge::RecipeFile;
use tvmerge_core::store::{checkpoint_hash, DEFAULT_MAX_SHARD_BYTES};
use tvmerge_core::{open_checkpoint, CheckpointManifest, Merger};

use crate::error::CliError;

pub const PROVENANCE_FILE: &str = "provenance.json";

#[derive(Debug, Args)]
pub struct MergeArgs {
    /// Recipe JSON. Relative paths inside it resolve against its directory.
    #[arg(long)]
    recipe: Option<PathBuf>,
    /// average, task_arithmetic, ties or dare_ties.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    trim_density: Option<f64>,
    #[arg(long)]
    drop_p: Option<f64>,
    #[arg(long)]
    rng_seed: Option<u64>,
    #[arg(long)]
    base: Option<PathBuf>,
    /// Expert checkpoint; repeat for each expert. Replaces the recipe's list.
    #[arg(long = "expert")]
    experts: Vec<PathBuf>,
    /// Output checkpoint directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// f32, bf16 or f16.
    #[arg(long)]
    output_dtype: Option<String>,
    /// Model id written to the output manifest.
    #[arg(long, default_value = "merged")]
    model_id: String,
    #[arg(long, default_value_t = DEFAULT_MAX_SHARD_BYTES)]
    max_shard_bytes: u64,
}

#[derive(Debug, Serialize)]
struct InputRecord {
    path: PathBuf,
    model_id: String,
    hash: String,
}

#[derive(Debug, Serialize)]
struct Provenance {
    tool: &'static str,
    version: &'static str,
    recipe_hash: String,
    recipe: RecipeFile,
    base: Option<InputRecord>,
    experts: Vec<InputRecord>,
    output_model_id: String,
    output_hash: String,
}

fn resolve(dir: &Path, p: &Path) -> PathBuf {
    if p.is_relative() {
        dir.join(p)
    } else {
        p.to_path_buf()
    }
}

/// The recipe file (if any) with flag overrides applied.
fn effective_recipe(args: &MergeArgs) -> Result<RecipeFile, CliError> {
    let mut recipe = match &args.recipe {
        Some(path) => {
            let mut r = RecipeFile::load(path)?;
            let dir = path.parent().unwrap_or(Path::new(""));
            r.base = r.base.map(|b| resolve(dir, &b));
            r.experts = r.experts.iter().map(|e| resolve(dir, e)).collect();
            r.output_path = r.output_path.map(|o| resolve(dir, &o));
            r
        }
        None => RecipeFile::default(),
    };
    if let Some(m) = &args.method {
        recipe.method = m.clone();
    }
    if recipe.method.is_empty() {
        return Err(CliError::Usage("no merge method: pass --method or --recipe".into()));
    }
    recipe.lambda = args.lambda.or(recipe.lambda);
    recipe.trim_density = args.trim_density.or(recipe.trim_density);
    recipe.drop_p = args.drop_p.or(recipe.drop_p);
    recipe.rng_seed = args.rng_seed.or(recipe.rng_seed);
    recipe.base = args.base.clone().or(recipe.base);
    if !args.experts.is_empty() {
        recipe.experts = args.experts.clone();
    }
    recipe.output_path = args.output.clone().or(recipe.output_path);
    recipe.output_dtype = args.output_dtype.clone().or(recipe.output_dtype);
    Ok(recipe)
}

fn input_record(path: &Path, m: &CheckpointManifest) -> Result<InputRecord, CliError> {
    Ok(InputRecord {
        path: path.to_path_buf(),
        model_id: m.model_id.clone(),
        hash: checkpoint_hash(m)?,
    })
}

pub fn run(args: MergeArgs) -> Result<(), CliError> {
    let recipe = effective_recipe(&args)?;
    let plan = recipe.validate()?;
    let output = plan
        .output_path
        .clone()
        .ok_or_else(|| CliError::Usage("no output path: pass --output or set output_path in the recipe".into()))?;

    let base = plan.base.as_ref().map(open_checkpoint).transpose()?;
    let experts = plan.experts.iter().map(open_checkpoint).collect::<Result<Vec<_>, _>>()?;
    let merger = Merger::new(plan.method, base.as_ref(), &experts)?;
    log::info!(
        "merging {} experts with {} into {}",
        experts.len(),
        plan.method.kind(),
        output.display()
    );
    let manifest = merger.write(&output, plan.output_dtype, args.max_shard_bytes, &args.model_id)?;
    let output_hash = checkpoint_hash(&manifest)?;

    let effective = plan.to_recipe_file();
    let provenance = Provenance {
        tool: "tvmerge",
        version: env!("CARGO_PKG_VERSION"),
        recipe_hash: effective.content_hash()?,
        recipe: effective,
        base: match (&plan.base, &base) {
            (Some(p), Some(m)) => Some(input_record(p, m)?),
            _ => None,
        },
        experts: plan
            .experts
            .iter()
            .zip(&experts)
            .map(|(p, m)| input_record(p, m))
            .collect::<Result<_, _>>()?,
        output_model_id: args.model_id.clone(),
        output_hash: output_hash.clone(),
    };
    let sidecar = output.join(PROVENANCE_FILE);
    let json = serde_json::to_vec_pretty(&provenance).expect("provenance serializes");
    fs::write(&sidecar, json).map_err(|e| CliError::io(format!("writing {}", sidecar.display()), e))?;
    println!("{output_hash}");
    Ok(())
}
