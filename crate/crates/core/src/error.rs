use std::path::PathBuf;

/// Errors produced by the eviction engine and its harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index {index} out of range for {len} heads")]
    HeadOutOfRange { index: usize, len: usize },

    #[error("softmax over an empty set of positions")]
    EmptySoftmax,

    #[error("zero retained attention mass in head {0}")]
    ZeroRetainedMass(usize),

    #[error("budget {requested} exceeds capacity {capacity}")]
    BudgetExceedsCapacity { requested: usize, capacity: usize },

    #[error("layer budget {budget} below floor {floor} (window {window} x {heads} heads + one per head)")]
    BudgetBelowFloor {
        budget: usize,
        floor: usize,
        window: usize,
        heads: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("trace capability: {0}")]
    Capability(String),

    #[error("malformed header: {0}")]
    Header(String),

    #[error("unsupported format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("payload checksum mismatch for {0}")]
    Checksum(PathBuf),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dim_err(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}
