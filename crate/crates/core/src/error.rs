use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("adaptive schedule requires calibrated layer statistics; run `adamerge calibrate` first")]
    MissingStats,

    #[error("layer statistics: {0}")]
    Stats(String),

    #[error("unsupported stats.json version {found} (expected {expected})")]
    StatsVersion { found: u64, expected: u64 },

    #[error("tensor archive {path}: {msg}")]
    Archive { path: PathBuf, msg: String },

    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: impl ToString, right: impl ToString) -> Self {
        Error::Shape {
            op,
            left: left.to_string(),
            right: right.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
