use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("index {index} out of range for {len} components")]
    Index { index: usize, len: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("empty sequence: {0}")]
    EmptySequence(String),
    #[error("token {token} is outside the vocabulary of size {size}")]
    Vocabulary { token: usize, size: usize },
    #[error("generation failed: {0}")]
    Generation(String),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("malformed blob: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
