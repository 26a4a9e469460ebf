use candle_core::{DType, Tensor};
use mmvae_core::seed::derive_seed;

use crate::codecs::{ImageDecoder, ImageEncoder, TextDecoder, TextEncoder, TrajectoryDecoder, TrajectoryEncoder};
use crate::config::{Modality, ModelConfig};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::gaussian::GaussianBatch;
use crate::nn::ParamStore;

/// Encoders and decoders for every configured modality plus their parameters.
pub struct MultimodalVae {
    config: ModelConfig,
    store: ParamStore,
    image: Option<(ImageEncoder, ImageDecoder)>,
    text: Option<(TextEncoder, TextDecoder)>,
    trajectory: Option<(TrajectoryEncoder, TrajectoryDecoder)>,
}

impl MultimodalVae {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let dtype = if config.double_precision { DType::F64 } else { DType::F32 };
        let mut ps = ParamStore::new(dtype, derive_seed(seed, "init", 0));
        let range = (config.log_var_min, config.log_var_max);
        let dz = config.latent_dim;
        let vocab = config.vocabulary.len();
        let image = if config.has(Modality::Image) {
            Some((
                ImageEncoder::new(&mut ps, "image.enc", &config.image, dz, range)?,
                ImageDecoder::new(&mut ps, "image.dec", &config.image, dz)?,
            ))
        } else {
            None
        };
        let text = if config.has(Modality::Text) {
            Some((
                TextEncoder::new(&mut ps, "text.enc", &config.text, vocab, dz, range)?,
                TextDecoder::new(&mut ps, "text.dec", &config.text, vocab, dz, config.text_len)?,
            ))
        } else {
            None
        };
        let trajectory = if config.has(Modality::Trajectory) {
            Some((
                TrajectoryEncoder::new(&mut ps, "trajectory.enc", &config.trajectory, dz, range)?,
                TrajectoryDecoder::new(&mut ps, "trajectory.dec", &config.trajectory, dz, config.t_max)?,
            ))
        } else {
            None
        };
        Ok(Self { config, store: ps, image, text, trajectory })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn modalities(&self) -> &[Modality] {
        &self.config.modalities
    }

    /// True for parameters that belong to an encoder.
    pub fn is_encoder_param(name: &str) -> bool {
        name.contains(".enc.")
    }

    fn missing(m: Modality) -> Error {
        Error::Config(format!("model has no {} codec", m.name()))
    }

    pub fn encode(&self, m: Modality, batch: &Batch) -> Result<GaussianBatch> {
        match m {
            Modality::Image => self.encode_image(&batch.images),
            Modality::Text => self.encode_text(&batch.tokens, &batch.text_keep),
            Modality::Trajectory => self.encode_trajectory(&batch.traj, &batch.traj_mask),
        }
    }

    pub fn encode_image(&self, images: &Tensor) -> Result<GaussianBatch> {
        self.image.as_ref().ok_or(Self::missing(Modality::Image))?.0.forward(images)
    }

    pub fn encode_text(&self, tokens: &Tensor, keep: &Tensor) -> Result<GaussianBatch> {
        self.text.as_ref().ok_or(Self::missing(Modality::Text))?.0.forward(tokens, keep)
    }

    pub fn encode_trajectory(&self, steps: &Tensor, mask: &Tensor) -> Result<GaussianBatch> {
        self.trajectory.as_ref().ok_or(Self::missing(Modality::Trajectory))?.0.forward(steps, mask)
    }

    pub fn decode_image(&self, z: &Tensor) -> Result<Tensor> {
        self.image.as_ref().ok_or(Self::missing(Modality::Image))?.1.forward(z)
    }

    pub fn decode_text(&self, z: &Tensor, length: usize) -> Result<Tensor> {
        self.text.as_ref().ok_or(Self::missing(Modality::Text))?.1.forward(z, length)
    }

    pub fn decode_trajectory(&self, z: &Tensor, length: usize) -> Result<Tensor> {
        self.trajectory.as_ref().ok_or(Self::missing(Modality::Trajectory))?.1.forward(z, length)
    }
}
