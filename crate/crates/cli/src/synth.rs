use std::path::PathBuf;

use clap::Args;
use tvmerge_core::lab::{gen_family, FamilySpec};

use crate::error::CliError;

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Family spec JSON.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

pub fn run(args: SynthArgs) -> Result<(), CliError> {
    let spec = FamilySpec::load(&args.spec)?;
    log::info!(
        "generating base and {} experts ({} parameters each)",
        spec.n_experts,
        spec.total_params()
    );
    let family = gen_family(&spec, &args.out_dir)?;
    println!("base\t{}", family.base_path.display());
    for p in &family.expert_paths {
        println!("expert\t{}", p.display());
    }
    Ok(())
}
