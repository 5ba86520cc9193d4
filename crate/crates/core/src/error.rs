use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the network, detector or training harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    /// Pyramid feature and backbone feature disagree spatially at a fusion point.
    #[error("alignment error at stage {stage}: pyramid feature is {pyramid_hw:?}, backbone feature is {backbone_hw:?}")]
    Alignment {
        stage: usize,
        pyramid_hw: (usize, usize),
        backbone_hw: (usize, usize),
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite loss ({value}) at epoch {epoch}, iteration {iter}")]
    NonFinite { epoch: usize, iter: usize, value: f64 },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
