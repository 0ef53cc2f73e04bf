use std::path::PathBuf;

use crate::dp::Trace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty input")]
    EmptyInput,

    #[error("malformed input at line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),

    #[error("signal has {samples} samples, shorter than one {window}-sample window")]
    SignalTooShort { samples: usize, window: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    /// The trace never entered the constraint region within the scaling cap.
    /// Carries the last trace produced.
    #[error("constraint unsatisfiable after {rounds} scaling rounds")]
    ConstraintUnsatisfiable { rounds: usize, trace: Trace },

    #[error("zero variance input")]
    ZeroVariance,
}

impl Error {
    /// Stable machine-readable identifier, used in CLI and HTTP error bodies.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::EmptyInput => "empty_input",
            Error::Malformed { .. } => "malformed",
            Error::UnsupportedEncoding(_) => "unsupported_encoding",
            Error::SignalTooShort { .. } => "signal_too_short",
            Error::InvalidConfig(_) => "invalid_config",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::ConstraintUnsatisfiable { .. } => "constraint_unsatisfiable",
            Error::ZeroVariance => "zero_variance",
        }
    }

    /// True for failures caused by the caller's input rather than the computation.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            Error::ConstraintUnsatisfiable { .. } | Error::ZeroVariance
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(line: usize, message: impl Into<String>) -> Self {
        Error::Malformed {
            line,
            message: message.into(),
        }
    }
}
