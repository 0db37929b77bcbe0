use std::path::Path;

use thiserror::Error;

/// Failures of a command, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Unparsable configuration or violated parameter invariant.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },

    /// Malformed or inconsistent input data.
    #[error("{0}")]
    Data(String),

    #[error(transparent)]
    Model(#[from] cellflow::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    /// 3 for validation errors, 4 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        use cellflow::Error as E;
        match self {
            CliError::Config(_) => 3,
            CliError::Io { .. } | CliError::Data(_) => 1,
            CliError::Model(e) => match e {
                E::Invalid(_) | E::InvalidGrid(_) | E::GridTooSmall { .. } => 3,
                E::Io(_) | E::Data(_) | E::GridMismatch => 1,
                _ => 4,
            },
        }
    }
}

/// Exit code of a run that stopped at a detected blow-up.
pub const EXIT_BLOW_UP: u8 = 2;
