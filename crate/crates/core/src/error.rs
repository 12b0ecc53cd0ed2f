use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in `{op}`: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by `{op}`")]
    NonFinite { op: &'static str },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("degenerate UV query: interpolated norm {norm:e} below 1e-8")]
    DegenerateUv { norm: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed tensor file at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("freeze violation: parameter `{0}` changed during prompt training")]
    FreezeViolation(String),

    #[error("training diverged at iteration {iteration} (loss is not finite)")]
    Divergence { iteration: usize },

    #[error("consistency score undefined: visibility mask is empty")]
    EmptyMask,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
