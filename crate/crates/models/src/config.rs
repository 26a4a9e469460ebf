use mmvae_core::fusion::SubsetStrategy;
use mmvae_core::scene::{IMAGE_SIZE, L_MAX, T_MAX, VOCABULARY};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mvae,
    Mmvae,
    Mopoe,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mvae => "mvae",
            ModelKind::Mmvae => "mmvae",
            ModelKind::Mopoe => "mopoe",
        }
    }

    pub fn objective(self) -> ObjectiveKind {
        match self {
            ModelKind::Mmvae => ObjectiveKind::IwaeDreg,
            _ => ObjectiveKind::Elbo,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Elbo,
    IwaeDreg,
}

/// Reconstruction term for the real-valued modalities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconKind {
    Mse,
    #[serde(alias = "sigma")]
    SigmaVae,
}

impl ReconKind {
    pub fn name(self) -> &'static str {
        match self {
            ReconKind::Mse => "mse",
            ReconKind::SigmaVae => "sigma",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Text,
    Trajectory,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Image, Modality::Text, Modality::Trajectory];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Text => "text",
            Modality::Trajectory => "trajectory",
        }
    }
}

/// How mixture models turn two present experts into one latent at inference time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceFusion {
    /// Precision-weighted product of the present experts, without the prior.
    ProductOfPresent,
    /// Decode every present expert's mean and average the decoded outputs.
    ComponentAverage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageCodecConfig {
    pub size: usize,
    /// Output channels of each stride-2 encoder block.
    pub encoder_channels: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    /// Channels entering each of the upsampling convolutions. The last
    /// convolution maps to RGB.
    pub decoder_channels: Vec<usize>,
}

impl Default for ImageCodecConfig {
    fn default() -> Self {
        Self {
            size: IMAGE_SIZE,
            encoder_channels: vec![8, 16, 32, 32],
            decoder_hidden: vec![128, 256],
            decoder_channels: vec![32, 16, 4],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceCodecConfig {
    pub width: usize,
    pub heads: usize,
    pub layers: usize,
    pub hidden: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextCodecConfig {
    pub embedding: usize,
    pub width: usize,
    pub heads: usize,
    pub layers: usize,
    pub hidden: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub model_kind: ModelKind,
    pub latent_dim: usize,
    pub recon_image: ReconKind,
    pub recon_trajectory: ReconKind,
    pub beta: f64,
    /// Importance samples for the mmvae objective.
    pub iwae_samples: usize,
    pub sigma_min_sq: f64,
    pub log_var_min: f64,
    pub log_var_max: f64,
    /// Whether the product of experts also multiplies in the prior.
    pub include_prior: bool,
    /// Whether the MoPoE powerset keeps the empty subset (mapped to the prior).
    pub include_empty_subset: bool,
    pub subset_strategy: SubsetStrategy,
    pub inference_fusion: InferenceFusion,
    pub modalities: Vec<Modality>,
    pub image: ImageCodecConfig,
    pub trajectory: SequenceCodecConfig,
    pub text: TextCodecConfig,
    pub t_max: usize,
    pub text_len: usize,
    pub vocabulary: Vec<String>,
    pub double_precision: bool,
}

impl ModelConfig {
    pub fn new(model_kind: ModelKind) -> Self {
        Self {
            model_kind,
            latent_dim: 12,
            recon_image: ReconKind::SigmaVae,
            recon_trajectory: ReconKind::SigmaVae,
            beta: 1.0,
            iwae_samples: 5,
            sigma_min_sq: 1e-6,
            log_var_min: -10.0,
            log_var_max: 10.0,
            include_prior: true,
            include_empty_subset: true,
            subset_strategy: SubsetStrategy::MvaeStandard,
            inference_fusion: InferenceFusion::ProductOfPresent,
            modalities: Modality::ALL.to_vec(),
            image: ImageCodecConfig::default(),
            trajectory: SequenceCodecConfig { width: 64, heads: 2, layers: 2, hidden: 128 },
            text: TextCodecConfig { embedding: 2, width: 32, heads: 2, layers: 1, hidden: 128 },
            t_max: T_MAX,
            text_len: L_MAX,
            vocabulary: VOCABULARY.iter().map(|s| s.to_string()).collect(),
            double_precision: false,
        }
    }

    /// Same recon kind for images and trajectories.
    pub fn with_recon(mut self, recon: ReconKind) -> Self {
        self.recon_image = recon;
        self.recon_trajectory = recon;
        self
    }

    /// A tiny configuration for gradient checks and smoke tests.
    pub fn tiny(model_kind: ModelKind) -> Self {
        Self {
            latent_dim: 4,
            image: ImageCodecConfig {
                size: 8,
                encoder_channels: vec![3, 4, 4],
                decoder_hidden: vec![6, 8],
                decoder_channels: vec![4, 3, 3],
            },
            trajectory: SequenceCodecConfig { width: 8, heads: 2, layers: 1, hidden: 8 },
            text: TextCodecConfig { embedding: 2, width: 8, heads: 2, layers: 1, hidden: 8 },
            t_max: 6,
            text_len: 4,
            ..Self::new(model_kind)
        }
    }

    /// Narrow codecs that still read generated datasets (64x64 images,
    /// full-length trajectories). Meant for smoke runs.
    pub fn small(model_kind: ModelKind) -> Self {
        Self {
            latent_dim: 4,
            image: ImageCodecConfig {
                size: IMAGE_SIZE,
                encoder_channels: vec![4, 4, 4, 4],
                decoder_hidden: vec![16, 16],
                decoder_channels: vec![4, 4, 4],
            },
            trajectory: SequenceCodecConfig { width: 8, heads: 2, layers: 1, hidden: 16 },
            text: TextCodecConfig { embedding: 2, width: 8, heads: 2, layers: 1, hidden: 16 },
            ..Self::new(model_kind)
        }
    }

    pub fn has(&self, m: Modality) -> bool {
        self.modalities.contains(&m)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive".into());
        }
        if self.modalities.is_empty() {
            return bad("at least one modality is required".into());
        }
        let mut sorted = self.modalities.clone();
        sorted.sort();
        sorted.dedup();
        if sorted != self.modalities {
            return bad("modalities must be listed once each in image, text, trajectory order".into());
        }
        if self.iwae_samples == 0 {
            return bad("iwae_samples must be at least 1".into());
        }
        if !(self.sigma_min_sq > 0.0) {
            return bad("sigma_min_sq must be positive".into());
        }
        if !(self.log_var_min < self.log_var_max) {
            return bad("log_var_min must be below log_var_max".into());
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be finite and non-negative".into());
        }
        let blocks = self.image.encoder_channels.len();
        if blocks == 0 || self.image.size % (1 << blocks) != 0 || self.image.size % 8 != 0 {
            return bad(format!(
                "image size {} must be divisible by 8 and by 2^{blocks} for the encoder blocks",
                self.image.size
            ));
        }
        if self.image.decoder_channels.len() != 3 {
            return bad("the image decoder has exactly three convolutions".into());
        }
        for (name, w, h) in [
            ("trajectory", self.trajectory.width, self.trajectory.heads),
            ("text", self.text.width, self.text.heads),
        ] {
            if w % 2 != 0 || h == 0 || w % h != 0 {
                return bad(format!("{name} width {w} must be even and divisible by {h} heads"));
            }
        }
        if self.t_max == 0 || self.text_len == 0 {
            return bad("sequence lengths must be positive".into());
        }
        if self.vocabulary.is_empty() {
            return bad("vocabulary must not be empty".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Keys (dot separated) whose values differ between two configs.
    pub fn diff(&self, other: &Self) -> Vec<String> {
        let a = serde_json::to_value(self).expect("config serializes");
        let b = serde_json::to_value(other).expect("config serializes");
        let mut out = Vec::new();
        diff_values("", &a, &b, &mut out);
        out
    }
}

fn diff_values(prefix: &str, a: &serde_json::Value, b: &serde_json::Value, out: &mut Vec<String>) {
    use serde_json::Value;
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let mut keys: Vec<&String> = x.keys().chain(y.keys()).collect();
            keys.sort();
            keys.dedup();
            for k in keys {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                match (x.get(k), y.get(k)) {
                    (Some(p), Some(q)) => diff_values(&path, p, q, out),
                    _ => out.push(path),
                }
            }
        }
        _ if a != b => out.push(prefix.to_string()),
        _ => {}
    }
}
