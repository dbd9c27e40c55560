//! CLI-level error type and its mapping onto process exit codes.

use std::path::PathBuf;

use resynth_core::Error as CoreError;

pub type Result<T> = std::result::Result<T, CliError>;

/// Everything the command-line driver can fail with. Each variant maps to
/// one process exit code (see [`CliError::exit_code`]).
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration: unparseable config text, invalid values, or
    /// settings the requested command cannot run with.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A required artifact is missing or does not match its recorded
    /// checksum. The message names the stage that produces it.
    #[error("missing prerequisite: {0}")]
    Prerequisite(String),

    /// An artifact file exists but its bytes are not a valid encoding.
    #[error("{path}: {message} at byte {offset}")]
    Format {
        path: PathBuf,
        offset: usize,
        message: String,
    },

    /// A numerical invariant failed while running (includes diverged
    /// training).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 0 is success, 2 configuration error, 3 missing or
    /// corrupted prerequisite, 4 numerical failure, 1 anything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Prerequisite(_) | CliError::Format { .. } => 3,
            CliError::Numerical(_) => 4,
            CliError::Io { .. } => 1,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Argument(msg) | CoreError::Config(msg) => CliError::Config(msg.into()),
            CoreError::Training { epoch, message } => {
                CliError::Numerical(format!("training failed at epoch {epoch}: {message}"))
            }
            CoreError::Numerical(msg) => CliError::Numerical(msg.into()),
        }
    }
}
