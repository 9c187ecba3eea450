use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("obstacle {index} coincides with the robot position")]
    CoincidentObstacle { index: usize },

    #[error("scenario sampling exhausted after {attempts} attempts")]
    SamplingExhausted { attempts: usize },

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("need at least {needed} points, have {available}")]
    InsufficientPoints { needed: usize, available: usize },

    #[error("context set is empty")]
    EmptyContext,

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("layout mismatch: expected {expected}, found {found}")]
    LayoutMismatch {
        expected: crate::Layout,
        found: crate::Layout,
    },

    #[error("unsupported checkpoint: {0}")]
    VersionMismatch(String),

    #[error("metrics were computed on different scenario sets")]
    ScenarioSetMismatch,

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}:{line}: malformed record: {reason}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
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
