use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the restoration engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate landmark configuration: {0}")]
    DegenerateLandmarks(String),

    #[error("landmark count mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("invalid landmarks: {0}")]
    InvalidLandmarks(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("missing weight tensor `{0}`")]
    MissingWeight(String),

    #[error("cannot normalize an all-zero matrix")]
    ZeroMatrix,

    #[error("keyframe store is empty")]
    EmptyStore,

    #[error("feature pyramid mismatch: {0}")]
    PyramidMismatch(String),

    #[error("expected {expected} discriminator scales, got {got}")]
    ScaleCountMismatch { expected: usize, got: usize },

    #[error("empty score tensor")]
    EmptyInput,

    #[error("non-finite loss input `{0}`")]
    NonFiniteInput(&'static str),

    #[error("image too small: {0}")]
    TooSmall(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("malformed weight file: {0}")]
    WeightFormat(String),

    #[error("trace replay diverged at event {event}: {message}")]
    TraceReplay { event: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Codec(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
