use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] tvmerge_core::Error),

    #[error("{0}")]
    Usage(String),

    /// The command ran but part of the work failed (for example grid records).
    #[error("{0}")]
    Partial(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if !e.is_user_error() => 2,
            CliError::Io { .. } => 2,
            _ => 1,
        }
    }
}
