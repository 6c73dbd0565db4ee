use thiserror::Error;
use vskd_core::VskdError;

/// Failures mapped onto the process exit-code contract.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Artifact(String),
    #[error("{0}")]
    Training(String),
    #[error("{0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Artifact(_) => 3,
            CliError::Training(_) => 4,
            CliError::Verification(_) => 5,
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn artifact(msg: impl Into<String>) -> Self {
        CliError::Artifact(msg.into())
    }
}

impl From<VskdError> for CliError {
    fn from(e: VskdError) -> Self {
        let msg = e.to_string();
        match e {
            VskdError::InvalidInput(_) => CliError::Input(msg),
            VskdError::Training { .. } => CliError::Training(msg),
            // Library I/O only touches artifacts: checkpoints and images.
            VskdError::Artifact(_) | VskdError::Io(_) => CliError::Artifact(msg),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
