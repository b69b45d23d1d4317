use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("level/pulse mismatch: a {levels}-level grid needs {} pulses, got {pulses}", levels - 1)]
    LevelMismatch { levels: u32, pulses: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("input outside [-1, 1]: {0}")]
    Domain(String),

    #[error("training failure: {0}")]
    TrainingFailure(String),

    #[error("misuse: {0}")]
    Misuse(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
