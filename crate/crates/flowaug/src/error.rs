//! Crate-wide error type.
//!
//! Every fallible public operation returns [`Result`]. Variants carry enough
//! context (operation name, offending index, expected vs. actual) that a
//! failure deep inside a composed computation can be reported without a
//! backtrace.

use std::path::PathBuf;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two operands (or an operand and an expectation) disagree on shape.
    #[error("shape mismatch in `{op}`: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// An operation produced NaN or infinity while strict checking was on.
    #[error("non-finite value produced by `{op}` at flat index {index}")]
    NonFinite { op: &'static str, index: usize },

    /// A graph primitive was asked to do something outside its contract.
    #[error("unsupported primitive `{name}`: {detail}")]
    UnsupportedPrimitive { name: &'static str, detail: String },

    /// `backward` was called on a value that is not a scalar.
    #[error("gradient requested for non-scalar value of shape {shape:?}")]
    NonScalarOutput { shape: Vec<usize> },

    /// The tape was already differentiated; recording or replaying again
    /// requires rebuilding the computation.
    #[error("computation tape already consumed by a backward pass")]
    TapeConsumed,

    /// A caller-supplied argument is invalid.
    #[error("invalid {what}: {detail}")]
    InvalidArgument { what: &'static str, detail: String },

    /// A numerical procedure failed (zero variance, singular matrix, ...).
    #[error("numerical failure in {what}: {detail}")]
    Numerical { what: &'static str, detail: String },

    /// Checkpoint encoding, decoding, or validation failed.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Configuration parsing or validation failed.
    #[error("config error: {0}")]
    Config(String),

    /// Dataset loading or generation failed.
    #[error("dataset error: {0}")]
    Dataset(String),

    /// An I/O error, annotated with the path involved.
    #[error("i/o error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A pipeline stage failed; wraps the underlying error with the stage name.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Shape-mismatch constructor used by tensor kernels.
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch { op, detail: detail.into() }
    }

    /// Invalid-argument constructor.
    pub fn invalid(what: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument { what, detail: detail.into() }
    }

    /// Numerical-failure constructor.
    pub fn numerical(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Numerical { what, detail: detail.into() }
    }

    /// Wraps `self` with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage { stage: stage.into(), source: Box::new(self) }
    }

    /// I/O constructor annotating the offending path.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
