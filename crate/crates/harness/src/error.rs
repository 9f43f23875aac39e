use std::path::PathBuf;

use crate::checkpoint::CheckpointError;
use crate::idx::IdxError;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: CheckpointError,
    },

    #[error("{path}: {source}")]
    Idx {
        path: PathBuf,
        #[source]
        source: IdxError,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Core(#[from] sanity_core::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 configuration, 3 data, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        use sanity_core::Error as E;
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Core(e) => match e {
                E::NonFinite(_) => 4,
                E::InvalidConfig(_) | E::NoConvLayer | E::ClassOutOfRange { .. } => 2,
                E::InvalidDataset(_) => 3,
                _ => 3,
            },
            HarnessError::Io { .. }
            | HarnessError::Checkpoint { .. }
            | HarnessError::Idx { .. }
            | HarnessError::Data(_)
            | HarnessError::Csv(_)
            | HarnessError::Json(_) => 3,
        }
    }
}
