use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Candle(#[from] candle_core::Error),
    #[error(transparent)]
    Core(#[from] mmvae_core::Error),
    #[error("config error: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty sequence: {0}")]
    EmptySequence(String),
    #[error("checkpoint integrity: {0}")]
    Integrity(String),
    #[error("non-finite loss at epoch {epoch}, step {step}; last good state saved to {saved}")]
    NonFinite { epoch: usize, step: usize, saved: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
