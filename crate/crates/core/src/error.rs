use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: no orders found")]
    EmptyOrders { path: PathBuf },

    #[error("line {line}: malformed item token {token:?}")]
    MalformedToken { line: usize, token: String },

    #[error("invalid item set: {0}")]
    InvalidSet(String),

    #[error("item {item} is outside the universe of {n} items")]
    UnknownItem { item: usize, n: usize },

    #[error("duplicate label {0:?}")]
    DuplicateLabel(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("empty candidate list")]
    EmptyCandidates,

    #[error("action {action} is not a candidate at this state")]
    NotACandidate { action: String },

    #[error("invalid path at step {step}: {reason}")]
    InvalidPath { step: usize, reason: String },

    #[error("item {0} was already added")]
    DuplicateItem(usize),

    #[error("set of size {size} exceeds the enumeration cap {cap}")]
    SetTooLarge { size: usize, cap: usize },

    #[error("operation requires an order-independent model, got {0}")]
    OrderDependentModel(&'static str),

    #[error("target set is unreachable under the item graph")]
    Unreachable,

    #[error("non-finite loss value {0}")]
    NonFiniteLoss(f64),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("no training sets are reachable")]
    NoTrainableData,

    #[error("pool has no sets of size {0}")]
    EmptyBucket(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("json: {0}")]
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
