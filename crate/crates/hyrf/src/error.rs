//! Crate-wide error type and result alias.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A file failed to parse; carries the offending path and line.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// A binary stream is corrupt or truncated; `offset` is the byte position
    /// at which decoding failed.
    #[error("corrupt stream at byte {offset}: {msg}")]
    Corrupt { offset: u64, msg: String },

    #[error("unsupported format version {found} (this build reads up to {supported})")]
    Version { found: u16, supported: u16 },

    /// Training produced a non-finite quantity; fatal.
    #[error("numeric divergence: {0}")]
    Divergence(String),

    /// An internal precondition was violated (e.g. backward called without a
    /// matching forward cache). Indicates a bug in the caller, not bad data.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Process exit code class for the CLI: 2 for data problems, 3 for
    /// numeric divergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence(_) => 3,
            Error::InvalidInput(_)
            | Error::Parse { .. }
            | Error::Corrupt { .. }
            | Error::Version { .. }
            | Error::Io(_) => 2,
            Error::Contract(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
