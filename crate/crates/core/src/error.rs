use std::path::PathBuf;

/// Errors raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied value is outside the operation's domain.
    #[error("invalid argument: {0}")]
    Argument(String),
    /// A non-finite or otherwise unusable numeric value.
    #[error("numeric domain error: {0}")]
    NumericDomain(String),
    /// A numeric failure during training, tagged with the step that produced it.
    #[error("numeric failure at step {step}: {message}")]
    TrainingStep { step: usize, message: String },
    /// The caller broke an operation's contract (wrong task kind, mismatched variant).
    #[error("contract violation: {0}")]
    Contract(String),
    /// A structured file failed to load; `line` is 1-based.
    #[error("{}:{line}: {field}: {message}", path.display())]
    Load {
        path: PathBuf,
        line: usize,
        field: String,
        message: String,
    },
    /// A binary checkpoint could not be decoded.
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("configuration: {0}")]
    Config(String),
    /// Failure talking to a remote embedding service.
    #[error("embedding service: {0}")]
    Remote(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn arg(msg: impl Into<String>) -> Error {
    Error::Argument(msg.into())
}

pub(crate) fn numeric(msg: impl Into<String>) -> Error {
    Error::NumericDomain(msg.into())
}
