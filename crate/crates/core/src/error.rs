use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("bundle validation failed:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{op}: non-finite value in output")]
    NonFinite { op: &'static str },

    #[error("non-finite gradient for parameter {name}")]
    NonFiniteGradient { name: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("autodiff: {0}")]
    Autodiff(String),

    #[error("requested {requested} negative pairs but only {available} admissible non-edges exist")]
    InsufficientNonEdges { requested: usize, available: usize },

    #[error("graph too small: {0}")]
    GraphTooSmall(String),

    #[error("dense PPR refused for N={nodes} (limit {limit}); use the truncated-series method")]
    DenseTooLarge { nodes: usize, limit: usize },

    #[error("linear solve failed: {0}")]
    Solver(String),

    #[error("training diverged at epoch {epoch} (last finite epoch: {last_finite:?})")]
    Divergence {
        epoch: usize,
        last_finite: Option<usize>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
