use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("log of non-positive value {value} at index {index}")]
    NonPositiveLog { index: usize, value: f64 },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss((usize, usize)),

    #[error("non-finite forward value during gradient check")]
    NonFinite,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("graph has no labeled node")]
    NoLabeledNode,

    #[error("node {0} is adjacent to every other node; no negative exists")]
    NoNegative(usize),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("parameter set does not match architecture {arch}: {detail}")]
    ParamMismatch { arch: String, detail: String },

    #[error("unknown loss name {0:?}")]
    UnknownLoss(String),

    #[error("unknown architecture {0:?}")]
    UnknownArch(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
