use std::path::PathBuf;

use thiserror::Error;

#[derive(Error, Debug)]
pub enum CliError {
    #[error(transparent)]
    Usage(#[from] clap::Error),

    /// Unreadable or schema-violating configuration.
    #[error("config error in {}: {message}", path.display())]
    Schema { path: PathBuf, message: String },

    /// Settings that parse but cannot drive the requested command.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] evsens::Error),

    #[error("cannot build the thread pool: {0}")]
    Threads(#[from] rayon::ThreadPoolBuildError),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    /// 2 for configuration problems, 3 for bad data or files, 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        use evsens::Error as E;
        match self {
            CliError::Usage(e) => {
                if e.use_stderr() {
                    2
                } else {
                    0
                }
            }
            CliError::Schema { .. } | CliError::Config(_) | CliError::Threads(_) => 2,
            CliError::Core(e) => match e {
                E::Input(_) | E::Spec(_) | E::Unsupported(_) => 2,
                E::DimensionMismatch { .. } | E::Format { .. } | E::Data(_) | E::Io { .. } => 3,
                E::DisjointSupport | E::DegenerateWeights(_) | E::Fit(_) | E::Initialisation(_) => 4,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
