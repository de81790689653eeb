use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("record `{0}` has no valid samples")]
    UnrecoverableRecord(String),

    #[error("record has {len} samples, shorter than the {window}-sample filter window")]
    ShortRecord { len: usize, window: usize },

    #[error("class {class} has {available} segments, {requested} requested")]
    Quota {
        class: String,
        available: usize,
        requested: usize,
    },

    #[error("invalid signal: {0}")]
    InvalidSignal(String),

    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    Shape {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("insufficient data: {needed} columns needed, {available} available")]
    InsufficientData { needed: usize, available: usize },

    #[error("class {0} has no signals")]
    EmptyClass(usize),

    #[error("measure is defined for exactly 2 classes, got {0}")]
    BinaryOnly(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("ROC needs at least one positive and one negative record")]
    DegenerateCohort,

    #[error("cohort spec error: {0}")]
    Spec(String),

    #[error("feature error: {0}")]
    Feature(String),

    #[error("parse error in {file}: {msg}")]
    Parse { file: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
