use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate weight vector")]
    DegenerateWeights,

    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    #[error("invalid skill set: {0}")]
    InvalidSkillSet(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("skill index {index} out of range (max {max})")]
    SkillOutOfRange { index: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("dynamics overshoot: column {column} has A^T p = {value} > 1")]
    DynamicsOvershoot { column: usize, value: f64 },

    #[error("invalid losses: {0}")]
    InvalidLosses(String),

    #[error("must observe before first update")]
    EmptyHistory,

    #[error("KL divergence undefined: previous mixture has a zero entry at {0}")]
    ZeroPrior(usize),

    #[error("no prerequisite edges; graph empty")]
    NoPrerequisites,

    #[error("insufficient data: {remaining} samples unallocated after all pools were exhausted")]
    InsufficientData { remaining: usize },

    #[error("no data")]
    NoData,

    #[error("k = {k} exceeds the number of points N = {n}")]
    TooManyClusters { k: usize, n: usize },

    #[error("trainer failure: {0}")]
    Trainer(String),

    #[error("operation not supported by this trainer: {0}")]
    Unsupported(&'static str),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
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
