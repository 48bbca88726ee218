use std::path::PathBuf;

/// Errors produced by the strokeforge library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite action component at index {index}: {value}")]
    NonFiniteAction { index: usize, value: f32 },

    #[error("action component {index} = {value} lies outside [0, 1]")]
    ActionOutOfRange { index: usize, value: f32 },

    #[error("discrete level {field} = {level} outside 0..=9")]
    InvalidLevel { field: &'static str, level: u8 },

    #[error("invalid oracle config: {0}")]
    InvalidOracleConfig(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("dataset must contain at least one record")]
    EmptyDataset,

    #[error("malformed dataset file {path}: {reason}")]
    MalformedDataset { path: PathBuf, reason: String },

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("training diverged: {what} became non-finite at step {step} (recent losses: {trace:?})")]
    Diverged {
        what: &'static str,
        step: usize,
        trace: Vec<f32>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing stroke template for class {0}")]
    MissingTemplate(usize),

    #[error("unknown feature tap {0:?}")]
    UnknownTap(String),

    #[error("class id {class_id} invalid for classifier with {num_classes} classes")]
    InvalidClass { class_id: usize, num_classes: usize },

    #[error("external oracle failed: {0}")]
    ExternalOracle(String),

    #[error(transparent)]
    Candle(#[from] candle_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
