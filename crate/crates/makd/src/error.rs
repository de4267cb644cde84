use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] makd_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("teacher checkpoint not found: {}", .0.display())]
    MissingCheckpoint(PathBuf),
    #[error("calibration failed for {variant}: distillation gradient vanishes on the first batch")]
    Calibration { variant: String },
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 for invalid input, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Json { .. } | Self::Format { .. } | Self::MissingCheckpoint(_) => 1,
            Self::Core(makd_core::Error::Parse { .. } | makd_core::Error::InvalidArgument(_)) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
