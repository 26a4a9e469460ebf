//! Neural codecs, multimodal objectives, training and evaluation built on
//! the `mmvae-core` scene and fusion primitives.

pub mod checkpoint;
pub mod codecs;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gaussian;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod optim;
pub mod trainer;
pub mod transformer;

pub use config::{Modality, ModelConfig, ModelKind, ObjectiveKind, ReconKind};
pub use data::Batch;
pub use error::{Error, Result};
pub use model::MultimodalVae;
