//! Sharded checkpoint storage with per-tensor streaming access.
//!
//! On disk a checkpoint is a directory with `manifest.json` and raw
//! little-endian shard files (`shard-00000.bin`, ...). Single-file
//! safetensors checkpoints are accepted on read.

mod io;
mod manifest;

pub use io::{
    checkpoint_hash, iter_tensors, read_tensor, write_checkpoint, DenseTensor,
    DEFAULT_MAX_SHARD_BYTES,
};
pub use manifest::{open_checkpoint, CheckpointManifest, Layout, TensorMeta, MANIFEST_FILE};
