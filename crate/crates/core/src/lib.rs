//! Streaming merges of fine-tuned checkpoints (averaging, task arithmetic,
//! TIES, DARE-TIES), with a resumable experiment grid, normalized-score
//! reporting and a synthetic checkpoint lab.

pub mod dtype;
pub mod error;
pub mod grid;
pub mod lab;
pub mod merge;
pub mod metrics;
pub mod rng;
pub mod store;

pub use dtype::Dtype;
pub use error::{Error, Result};
pub use merge::{MergeMethod, MergeRecipe, Merger, MethodKind};
pub use store::{open_checkpoint, CheckpointManifest, DenseTensor};
