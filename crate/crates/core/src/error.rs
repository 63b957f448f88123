//! Crate-wide error type.
//!
//! Every fallible operation returns [`Result`]. The variants partition
//! failures by who is at fault: bad tensor shapes, violated API contracts,
//! invalid configuration, impossible sampling requests, numerical blow-ups
//! during training, and I/O or format problems. The CLI maps each variant to
//! a distinct exit code (see [`crate::cli`]).

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or image shapes do not line up for the requested operation.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An API precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A configuration value is missing, unknown, or out of range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A sampling request cannot be satisfied by the dataset.
    #[error("sampling error: {0}")]
    Sampling(String),

    /// Training produced a non-finite quantity; `param` names the offender.
    #[error("training diverged at step {step} (lr {lr:e}): {detail}")]
    Training { step: u64, lr: f64, detail: String },

    /// Reading or writing an artifact failed.
    #[error("i/o error: {0}")]
    Io(String),

    /// A serialized artifact is malformed or has the wrong magic/version.
    #[error("format error: {0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// Stable process exit code for this error class (0 means success).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 3,
            Error::Sampling(_) => 4,
            Error::Contract(_) => 5,
            Error::Training { .. } => 6,
            Error::Io(_) => 7,
            Error::Format(_) => 8,
            Error::Dimension(_) => 9,
        }
    }
}
