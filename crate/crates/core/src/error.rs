use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing manifest: no manifest.json or safetensors file under {0}")]
    MissingManifest(PathBuf),

    #[error("shard path missing: {0}")]
    ShardPathMissing(PathBuf),

    #[error("overlapping byte ranges in shard {shard}: `{first}` and `{second}`")]
    OverlappingRanges {
        shard: usize,
        first: String,
        second: String,
    },

    #[error("unknown dtype tag `{0}`")]
    UnknownDtype(String),

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("unknown tensor `{0}`")]
    UnknownTensor(String),

    #[error("byte_length mismatch for `{name}`: manifest says {recorded} bytes, shape and dtype imply {expected}")]
    ByteLengthMismatch {
        name: String,
        recorded: u64,
        expected: u64,
    },

    #[error("duplicate tensor name `{0}`")]
    DuplicateName(String),

    #[error("shard budget of {budget} bytes is smaller than tensor `{name}` ({size} bytes)")]
    ShardBudgetTooSmall { budget: u64, name: String, size: u64 },

    #[error("structure mismatch: {0}")]
    StructureMismatch(String),

    #[error("invalid {field}: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("empty expert list")]
    EmptyExperts,

    #[error("infeasible conflict_rate {requested}: maximum feasible rate for this spec is {max_feasible}")]
    InfeasibleConflictRate { requested: f64, max_feasible: f64 },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("{context}: {source}")]
    Csv {
        context: String,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn csv(context: impl Into<String>, source: csv::Error) -> Self {
        Error::Csv {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True when the failure stems from the caller's inputs (bad files,
    /// bad parameters, mismatched checkpoints) rather than the environment.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Io { .. })
    }
}
