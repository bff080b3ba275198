use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the estimators, file readers and the sensitivity workflow.
#[derive(Error, Debug)]
pub enum Error {
    /// Malformed arguments: wrong dimensions, empty inputs, out-of-range settings.
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A prior or likelihood definition that fails validation.
    #[error("invalid model definition: {0}")]
    Spec(String),

    /// On-disk sample or target files that cannot be parsed.
    #[error("format error in {}{}: {message}", path.display(), line.map(|l| format!(" (row {l})")).unwrap_or_default())]
    Format {
        path: PathBuf,
        line: Option<usize>,
        message: String,
    },

    /// Draws that are inconsistent with the model they supposedly came from.
    #[error("data inconsistency: {0}")]
    Data(String),

    #[error("all importance weights are zero: alternative and original posteriors have disjoint support")]
    DisjointSupport,

    #[error("degenerate importance weights: {0}")]
    DegenerateWeights(String),

    #[error("target fit failed: {0}")]
    Fit(String),

    #[error("sampler initialisation failed: {0}")]
    Initialisation(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, line: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
