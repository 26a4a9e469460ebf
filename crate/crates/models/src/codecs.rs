//! Per-modality encoders and decoders.
//!
//! Every encoder maps a batch to a [`GaussianBatch`] with clamped
//! log-variance. Decoders map latents `[N, Dz]` to the modality's mean.

use candle_core::{Module, Tensor, D};

use crate::config::{ImageCodecConfig, SequenceCodecConfig, TextCodecConfig};
use crate::error::{Error, Result};
use crate::gaussian::GaussianBatch;
use crate::nn::{sigmoid, Conv2d, LayerNorm, Linear, ParamStore};
use crate::transformer::{causal_bias, key_padding_bias, positional_tensor, DecoderLayer, EncoderLayer};

type Range = (f64, f64);

fn heads(
    ps: &mut ParamStore,
    name: &str,
    width: usize,
    latent: usize,
) -> Result<(Linear, Linear)> {
    Ok((ps.linear(&format!("{name}.mean"), width, latent)?, ps.linear(&format!("{name}.log_var"), width, latent)?))
}

pub struct ImageEncoder {
    convs: Vec<Conv2d>,
    mean: Linear,
    log_var: Linear,
    size: usize,
    range: Range,
}

impl ImageEncoder {
    pub fn new(ps: &mut ParamStore, name: &str, cfg: &ImageCodecConfig, latent: usize, range: Range) -> Result<Self> {
        let mut convs = Vec::new();
        let mut c_in = 3;
        for (i, &c) in cfg.encoder_channels.iter().enumerate() {
            convs.push(ps.conv2d(&format!("{name}.conv{i}"), c_in, c, 4, 2, 1)?);
            c_in = c;
        }
        let side = cfg.size >> cfg.encoder_channels.len();
        let (mean, log_var) = heads(ps, name, c_in * side * side, latent)?;
        Ok(Self { convs, mean, log_var, size: cfg.size, range })
    }

    /// `x`: `[B, 3, S, S]` with values in `[0, 1]`.
    pub fn forward(&self, x: &Tensor) -> Result<GaussianBatch> {
        let (_, c, h, w) = x.dims4()?;
        if c != 3 || h != self.size || w != self.size {
            return Err(Error::Shape(format!("expected images of 3x{0}x{0}, got {c}x{h}x{w}", self.size)));
        }
        let mut h = x.clone();
        for conv in &self.convs {
            h = conv.forward(&h)?.relu()?;
        }
        let h = h.flatten_from(1)?;
        let log_var = self.log_var.forward(&h)?.clamp(self.range.0, self.range.1)?;
        Ok(GaussianBatch::new(self.mean.forward(&h)?, log_var))
    }
}

pub struct ImageDecoder {
    fcs: Vec<Linear>,
    convs: Vec<Conv2d>,
    seed_channels: usize,
    seed_side: usize,
    latent: usize,
}

impl ImageDecoder {
    pub fn new(ps: &mut ParamStore, name: &str, cfg: &ImageCodecConfig, latent: usize) -> Result<Self> {
        let seed_channels = cfg.decoder_channels[0];
        let seed_side = cfg.size / 8;
        let mut widths = vec![latent];
        widths.extend(&cfg.decoder_hidden);
        widths.push(seed_channels * seed_side * seed_side);
        let fcs = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| ps.linear(&format!("{name}.fc{i}"), w[0], w[1]))
            .collect::<Result<Vec<_>>>()?;
        let mut chans = cfg.decoder_channels.clone();
        chans.push(3);
        let convs = chans
            .windows(2)
            .enumerate()
            .map(|(i, c)| ps.conv2d(&format!("{name}.conv{i}"), c[0], 4 * c[1], 3, 1, 1))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { fcs, convs, seed_channels, seed_side, latent })
    }

    /// `z`: `[N, Dz]` to mean images `[N, 3, S, S]` in `[0, 1]`.
    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        let (n, dz) = z.dims2()?;
        if dz != self.latent {
            return Err(Error::Shape(format!("latent width {dz}, decoder expects {}", self.latent)));
        }
        let mut h = z.clone();
        for fc in &self.fcs {
            h = fc.forward(&h)?.relu()?;
        }
        let mut h = h.reshape((n, self.seed_channels, self.seed_side, self.seed_side))?;
        let last = self.convs.len() - 1;
        for (i, conv) in self.convs.iter().enumerate() {
            h = depth_to_space(&conv.forward(&h)?)?;
            h = if i == last { sigmoid(&h)? } else { h.relu()? };
        }
        Ok(h)
    }
}

/// `[N, 4C, H, W]` to `[N, C, 2H, 2W]`, each group of four channels filling
/// one 2x2 output cell.
fn depth_to_space(x: &Tensor) -> Result<Tensor> {
    let (n, c4, h, w) = x.dims4()?;
    let c = c4 / 4;
    let x = x.reshape((n * c, 2, 2, h, w))?.permute((0, 3, 1, 4, 2))?;
    Ok(x.reshape((n, c, 2 * h, 2 * w))?)
}

/// Shared body of the two sequence encoders: learned distribution tokens
/// are prepended to the embedded steps and read out after the stack.
struct TokenEncoder {
    tokens: Tensor,
    layers: Vec<EncoderLayer>,
    norm: LayerNorm,
    mean: Linear,
    log_var: Linear,
    width: usize,
    range: Range,
}

impl TokenEncoder {
    fn new(
        ps: &mut ParamStore,
        name: &str,
        width: usize,
        heads_n: usize,
        layers: usize,
        hidden: usize,
        latent: usize,
        range: Range,
    ) -> Result<Self> {
        let tokens = ps.normal(&format!("{name}.tokens"), &[2, width], 0.1)?;
        let layers = (0..layers)
            .map(|i| EncoderLayer::new(ps, &format!("{name}.layer{i}"), width, heads_n, hidden))
            .collect::<Result<Vec<_>>>()?;
        let norm = ps.layer_norm(&format!("{name}.norm"), width)?;
        let (mean, log_var) = heads(ps, name, width, latent)?;
        Ok(Self { tokens, layers, norm, mean, log_var, width, range })
    }

    /// `h`: embedded steps `[B, T, W]` without positions; `keep`: `[B, T]`.
    fn forward(&self, h: &Tensor, keep: &Tensor) -> Result<GaussianBatch> {
        let (b, t, _) = h.dims3()?;
        let h = h.broadcast_add(&positional_tensor(t, self.width, h)?)?;
        let tok = self.tokens.unsqueeze(0)?.broadcast_as((b, 2, self.width))?;
        let mut h = Tensor::cat(&[&tok, &h], 1)?;
        let keep = Tensor::cat(&[&Tensor::ones((b, 2), keep.dtype(), keep.device())?, keep], 1)?;
        let bias = key_padding_bias(&keep)?;
        for layer in &self.layers {
            h = layer.forward(&h, Some(&bias))?;
        }
        let h = self.norm.forward(&h)?;
        let mean = self.mean.forward(&h.narrow(1, 0, 1)?.squeeze(1)?)?;
        let log_var = self.log_var.forward(&h.narrow(1, 1, 1)?.squeeze(1)?)?.clamp(self.range.0, self.range.1)?;
        Ok(GaussianBatch::new(mean, log_var))
    }
}

/// Shared body of the two sequence decoders: positional queries with causal
/// self-attention cross-attend to the projected latent.
struct QueryDecoder {
    project: Linear,
    layers: Vec<DecoderLayer>,
    norm: LayerNorm,
    out: Linear,
    width: usize,
}

impl QueryDecoder {
    fn new(
        ps: &mut ParamStore,
        name: &str,
        width: usize,
        heads: usize,
        layers: usize,
        hidden: usize,
        latent: usize,
        out: usize,
    ) -> Result<Self> {
        let project = ps.linear(&format!("{name}.project"), latent, width)?;
        let layers = (0..layers)
            .map(|i| DecoderLayer::new(ps, &format!("{name}.layer{i}"), width, heads, hidden))
            .collect::<Result<Vec<_>>>()?;
        let norm = ps.layer_norm(&format!("{name}.norm"), width)?;
        let out = ps.linear(&format!("{name}.out"), width, out)?;
        Ok(Self { project, layers, norm, out, width })
    }

    fn forward(&self, z: &Tensor, length: usize) -> Result<Tensor> {
        let n = z.dim(0)?;
        let memory = self.project.forward(z)?.unsqueeze(1)?;
        let mut h = positional_tensor(length, self.width, z)?.unsqueeze(0)?.broadcast_as((n, length, self.width))?.contiguous()?;
        let bias = causal_bias(length, z)?;
        for layer in &self.layers {
            h = layer.forward(&h, &memory, Some(&bias))?;
        }
        Ok(self.out.forward(&self.norm.forward(&h)?)?)
    }
}

pub struct TrajectoryEncoder {
    embed: Linear,
    body: TokenEncoder,
}

impl TrajectoryEncoder {
    pub fn new(ps: &mut ParamStore, name: &str, cfg: &SequenceCodecConfig, latent: usize, range: Range) -> Result<Self> {
        Ok(Self {
            embed: ps.linear(&format!("{name}.embed"), 4, cfg.width)?,
            body: TokenEncoder::new(ps, name, cfg.width, cfg.heads, cfg.layers, cfg.hidden, latent, range)?,
        })
    }

    /// `steps`: `[B, T, 4]`, `keep`: `[B, T]` with 1 for valid steps.
    pub fn forward(&self, steps: &Tensor, keep: &Tensor) -> Result<GaussianBatch> {
        let valid: Vec<f64> = keep.sum(D::Minus1)?.to_dtype(candle_core::DType::F64)?.to_vec1()?;
        if let Some(i) = valid.iter().position(|&v| v < 0.5) {
            return Err(Error::EmptySequence(format!("trajectory {i} has no valid steps")));
        }
        self.body.forward(&self.embed.forward(steps)?, keep)
    }
}

pub struct TrajectoryDecoder {
    body: QueryDecoder,
    t_max: usize,
}

impl TrajectoryDecoder {
    pub fn new(ps: &mut ParamStore, name: &str, cfg: &SequenceCodecConfig, latent: usize, t_max: usize) -> Result<Self> {
        let body = QueryDecoder::new(ps, name, cfg.width, cfg.heads, cfg.layers, cfg.hidden, latent, 4)?;
        Ok(Self { body, t_max })
    }

    /// `[N, Dz]` to `[N, T, 4]`; the gripper column is squashed to `[0, 1]`.
    pub fn forward(&self, z: &Tensor, length: usize) -> Result<Tensor> {
        if length == 0 || length > self.t_max {
            return Err(Error::Config(format!("trajectory length {length} outside 1..={}", self.t_max)));
        }
        let out = self.body.forward(z, length)?;
        let xyz = out.narrow(2, 0, 3)?;
        let g = sigmoid(&out.narrow(2, 3, 1)?)?;
        Ok(Tensor::cat(&[&xyz, &g], 2)?)
    }
}

pub struct TextEncoder {
    embedding: Tensor,
    project: Linear,
    body: TokenEncoder,
    vocab: usize,
}

impl TextEncoder {
    pub fn new(ps: &mut ParamStore, name: &str, cfg: &TextCodecConfig, vocab: usize, latent: usize, range: Range) -> Result<Self> {
        Ok(Self {
            embedding: ps.normal(&format!("{name}.embedding"), &[vocab, cfg.embedding], 1.0)?,
            project: ps.linear(&format!("{name}.project"), cfg.embedding, cfg.width)?,
            body: TokenEncoder::new(ps, name, cfg.width, cfg.heads, cfg.layers, cfg.hidden, latent, range)?,
            vocab,
        })
    }

    /// `tokens`: `[B, L]` u32 indices; `keep`: `[B, L]` with 1 for non-PAD words.
    pub fn forward(&self, tokens: &Tensor, keep: &Tensor) -> Result<GaussianBatch> {
        let (b, l) = tokens.dims2()?;
        let flat = tokens.flatten_all()?;
        let ids: Vec<u32> = flat.to_vec1()?;
        if let Some(&bad) = ids.iter().find(|&&t| t as usize >= self.vocab) {
            return Err(mmvae_core::Error::Vocabulary { token: bad as usize, size: self.vocab }.into());
        }
        let e = self.embedding.index_select(&flat, 0)?.reshape((b, l, ()))?;
        self.body.forward(&self.project.forward(&e)?, keep)
    }
}

pub struct TextDecoder {
    body: QueryDecoder,
    l_max: usize,
}

impl TextDecoder {
    pub fn new(ps: &mut ParamStore, name: &str, cfg: &TextCodecConfig, vocab: usize, latent: usize, l_max: usize) -> Result<Self> {
        let body = QueryDecoder::new(ps, name, cfg.width, cfg.heads, cfg.layers, cfg.hidden, latent, vocab)?;
        Ok(Self { body, l_max })
    }

    /// `[N, Dz]` to logits `[N, L, V]`.
    pub fn forward(&self, z: &Tensor, length: usize) -> Result<Tensor> {
        if length == 0 || length > self.l_max {
            return Err(Error::Config(format!("text length {length} outside 1..={}", self.l_max)));
        }
        self.body.forward(z, length)
    }
}
