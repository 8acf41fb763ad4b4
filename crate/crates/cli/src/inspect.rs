use std::path::PathBuf;

use clap::Args;
use tvmerge_core::open_checkpoint;
use tvmerge_core::store::{checkpoint_hash, Layout};

use crate::error::CliError;

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Checkpoint directory or safetensors file.
    path: PathBuf,
    /// List every tensor.
    #[arg(long)]
    tensors: bool,
    /// Also print the content hash (reads every shard).
    #[arg(long)]
    hash: bool,
}

pub fn run(args: InspectArgs) -> Result<(), CliError> {
    let m = open_checkpoint(&args.path)?;
    let layout = match m.layout() {
        Layout::Sharded => "sharded",
        Layout::Safetensors => "safetensors",
    };
    let bytes: u64 = m.tensors.iter().map(|t| t.byte_length).sum();
    println!("model_id\t{}", m.model_id);
    println!("layout\t{layout}");
    println!("tensors\t{}", m.tensors.len());
    println!("parameters\t{}", m.total_params);
    println!("bytes\t{bytes}");
    println!("largest_tensor_bytes\t{}", m.largest_tensor_bytes());
    println!("shards\t{}", m.shard_paths.len());
    if args.hash {
        println!("hash\t{}", checkpoint_hash(&m)?);
    }
    if args.tensors {
        for t in &m.tensors {
            println!(
                "tensor\t{}\t{}\t{:?}\t{}\t{}\t{}",
                t.name,
                t.dtype.tag(),
                t.shape,
                t.shard_id,
                t.byte_offset,
                t.byte_length
            );
        }
    }
    Ok(())
}
