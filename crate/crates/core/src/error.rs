//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown gesture label: {0:?}")]
    UnknownGesture(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("recording too short: {got} frames, need at least {need}")]
    RecordingTooShort { got: usize, need: usize },

    #[error("unknown subject: {0:?}")]
    UnknownSubject(String),

    #[error("need at least {need} subjects, got {got}")]
    TooFewSubjects { need: usize, got: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("label index {0} outside [0, 9)")]
    LabelOutOfRange(usize),

    #[error("timestamps out of order: {prev} then {next}")]
    OutOfOrderTimestamp { prev: f64, next: f64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
