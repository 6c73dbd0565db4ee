use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum VskdError {
    /// Input violates an operation's precondition (shapes, ranges, empty data).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Training produced a non-finite loss.
    #[error("training failed at epoch {epoch}: {reason}")]
    Training { epoch: usize, reason: String },

    /// A persisted artifact (checkpoint, raw image) is corrupt or incompatible.
    #[error("artifact error: {0}")]
    Artifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = VskdError> = std::result::Result<T, E>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(VskdError::InvalidInput(msg.into()))
}
