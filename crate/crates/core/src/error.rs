//! Crate-wide error type and the exit-code convention used by the CLI.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not line up for an operation.
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// An argument was structurally valid but out of range or otherwise
    /// unusable (negative length, zero stride, position out of bounds, ...).
    #[error("invalid argument in {op}: {detail}")]
    InvalidArg { op: &'static str, detail: String },

    /// An operation produced NaN or an infinity.
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    /// Misuse of the autodiff tape (backward on a non-scalar, repeated
    /// backward without clearing gradients, ...).
    #[error("autodiff error: {0}")]
    Autodiff(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("wav error ({path}): {detail}")]
    Wav { path: String, detail: String },

    #[error("corpus error: {0}")]
    Corpus(String),

    /// Training aborted because a loss or gradient went non-finite.
    #[error("training diverged at epoch {epoch}, batch {batch} (mixtures [{mixtures}]): {detail}")]
    Diverged {
        epoch: usize,
        batch: usize,
        mixtures: String,
        detail: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArg {
            op,
            detail: detail.into(),
        }
    }

    /// Process exit code for the CLI: 2 for configuration and argument
    /// problems (the caller can fix the invocation), 3 for runtime failures
    /// (missing files, divergence, numeric trouble).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Shape { .. }
            | Error::InvalidArg { .. }
            | Error::Config(_)
            | Error::Autodiff(_) => 2,
            Error::NonFinite { .. }
            | Error::Checkpoint(_)
            | Error::Wav { .. }
            | Error::Corpus(_)
            | Error::Diverged { .. }
            | Error::Io(_) => 3,
        }
    }
}
