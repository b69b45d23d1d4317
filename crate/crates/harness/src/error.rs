use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: malformed file at byte {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },
    #[error("data error: {0}")]
    Data(String),
    #[error("missing checkpoint {path}; create it with `xbar pretrain --config <file>` first")]
    MissingCheckpoint { path: PathBuf },
    #[error(transparent)]
    Core(#[from] xbar_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 1 usage or configuration, 2 data or format,
    /// 3 training failure.
    pub fn exit_code(&self) -> i32 {
        use xbar_core::Error as E;
        match self {
            HarnessError::Config(_) | HarnessError::MissingCheckpoint { .. } => 1,
            HarnessError::Format { .. } | HarnessError::Data(_) | HarnessError::Io { .. } => 2,
            HarnessError::Core(e) => match e {
                E::TrainingFailure(_) => 3,
                E::Domain(_) | E::Shape(_) | E::Checkpoint(_) | E::Io(_) => 2,
                _ => 1,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
