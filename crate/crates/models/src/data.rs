//! Conversion of dataset records into training tensors.

use candle_core::{DType, Device, Tensor};
use mmvae_core::dataset::Dataset;
use mmvae_core::scene::{ImageTensor, TokenSequence, Trajectory, PAD};

use crate::error::{Error, Result};

/// One minibatch. The trajectory axis is trimmed to the longest valid
/// trajectory present, which the causal decoders make lossless.
#[derive(Clone, Debug)]
pub struct Batch {
    pub size: usize,
    /// `[B, 3, S, S]` in `[0, 1]`.
    pub images: Tensor,
    /// `[B, L]` u32.
    pub tokens: Tensor,
    /// `[B, L]`: 1 on real words.
    pub text_keep: Tensor,
    /// `[B, L]`: 1 on positions scored by the text likelihood.
    pub text_loss_mask: Tensor,
    /// `[B, L, V]` one-hot targets.
    pub text_onehot: Tensor,
    /// `[B, T, 4]`.
    pub traj: Tensor,
    /// `[B, T]`: 1 on valid steps.
    pub traj_mask: Tensor,
}

pub struct Example<'a> {
    pub image: &'a ImageTensor,
    pub text: &'a TokenSequence,
    pub trajectory: &'a Trajectory,
}

struct Raw {
    images: Vec<f32>,
    size: usize,
    tokens: Vec<u32>,
    text_len: usize,
    traj: Vec<f32>,
    traj_mask: Vec<f32>,
    t: usize,
}

impl Batch {
    pub fn from_dataset(ds: &Dataset, indices: &[usize], dtype: DType, vocab: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        let s = ds.image_size();
        let l = ds.text_len();
        let t_max = ds.t_max();
        let px = s * s * 3;
        let mut lengths = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= ds.len() {
                return Err(mmvae_core::Error::Index { index: i, len: ds.len() }.into());
            }
            lengths.push(ds.traj_mask[i * t_max..(i + 1) * t_max].iter().filter(|&&m| m != 0).count());
        }
        let t = lengths.iter().copied().max().unwrap_or(1).max(1);
        let mut raw = Raw {
            images: Vec::with_capacity(indices.len() * px),
            size: s,
            tokens: Vec::with_capacity(indices.len() * l),
            text_len: l,
            traj: Vec::with_capacity(indices.len() * t * 4),
            traj_mask: Vec::with_capacity(indices.len() * t),
            t,
        };
        for &i in indices {
            raw.images.extend(ds.images[i * px..(i + 1) * px].iter().map(|&b| b as f32 / 255.0));
            raw.tokens.extend(ds.text[i * l..(i + 1) * l].iter().map(|&w| w as u32));
            let base = i * t_max;
            raw.traj.extend_from_slice(&ds.traj[base * 4..(base + t) * 4]);
            raw.traj_mask.extend(ds.traj_mask[base..base + t].iter().map(|&m| m as f32));
        }
        raw.into_batch(indices.len(), dtype, vocab)
    }

    pub fn from_examples(examples: &[Example<'_>], text_len: usize, dtype: DType, vocab: usize) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        let s = examples[0].image.height;
        let t = examples.iter().map(|e| e.trajectory.len()).max().unwrap_or(1).max(1);
        let mut raw = Raw {
            images: Vec::new(),
            size: s,
            tokens: Vec::new(),
            text_len,
            traj: Vec::new(),
            traj_mask: Vec::new(),
            t,
        };
        for e in examples {
            if e.image.height != s || e.image.width != s {
                return Err(Error::Shape("images in a batch must share one size".into()));
            }
            raw.images.extend_from_slice(&e.image.pixels);
            let mut toks: Vec<u32> = e.text.tokens.iter().map(|&w| w as u32).collect();
            if toks.len() > text_len {
                return Err(Error::Shape(format!("instruction longer than {text_len} tokens")));
            }
            toks.resize(text_len, PAD as u32);
            raw.tokens.extend(toks);
            let (data, mask) = e.trajectory.padded(t);
            raw.traj.extend(data);
            raw.traj_mask.extend(mask.iter().map(|&m| m as f32));
        }
        raw.into_batch(examples.len(), dtype, vocab)
    }
}

impl Raw {
    fn into_batch(self, b: usize, dtype: DType, vocab: usize) -> Result<Batch> {
        let dev = Device::Cpu;
        let (s, l, t) = (self.size, self.text_len, self.t);
        let images = Tensor::from_vec(self.images, (b, s, s, 3), &dev)?.permute((0, 3, 1, 2))?.contiguous()?.to_dtype(dtype)?;
        let mut keep = Vec::with_capacity(b * l);
        let mut loss = Vec::with_capacity(b * l);
        let mut onehot = vec![0f32; b * l * vocab];
        for (row, chunk) in self.tokens.chunks(l).enumerate() {
            let mut seen_pad = false;
            for (j, &tok) in chunk.iter().enumerate() {
                let tok = tok as usize;
                if tok >= vocab {
                    return Err(mmvae_core::Error::Vocabulary { token: tok, size: vocab }.into());
                }
                onehot[(row * l + j) * vocab + tok] = 1.0;
                let is_pad = tok == PAD;
                keep.push(if is_pad { 0f32 } else { 1.0 });
                loss.push(if !is_pad || !seen_pad { 1f32 } else { 0.0 });
                seen_pad |= is_pad;
            }
        }
        let f = |v: Vec<f32>, shape: &[usize]| -> Result<Tensor> { Ok(Tensor::from_vec(v, shape, &dev)?.to_dtype(dtype)?) };
        Ok(Batch {
            size: b,
            images,
            tokens: Tensor::from_vec(self.tokens, (b, l), &dev)?,
            text_keep: f(keep, &[b, l])?,
            text_loss_mask: f(loss, &[b, l])?,
            text_onehot: f(onehot, &[b, l, vocab])?,
            traj: f(self.traj, &[b, t, 4])?,
            traj_mask: f(self.traj_mask, &[b, t])?,
        })
    }
}

/// `[N, 3, S, S]` tensor from rendered images.
pub fn image_tensor(images: &[&ImageTensor], dtype: DType) -> Result<Tensor> {
    let s = images.first().ok_or_else(|| Error::Config("no images".into()))?.height;
    let mut px = Vec::with_capacity(images.len() * s * s * 3);
    for im in images {
        if im.height != s || im.width != s {
            return Err(Error::Shape("images must share one size".into()));
        }
        px.extend_from_slice(&im.pixels);
    }
    Ok(Tensor::from_vec(px, (images.len(), s, s, 3), &Device::Cpu)?.permute((0, 3, 1, 2))?.contiguous()?.to_dtype(dtype)?)
}

/// Token ids `[N, L]` and the non-PAD keep mask.
pub fn text_tensors(seqs: &[&TokenSequence], length: usize, dtype: DType) -> Result<(Tensor, Tensor)> {
    let mut ids = Vec::with_capacity(seqs.len() * length);
    let mut keep = Vec::with_capacity(seqs.len() * length);
    for s in seqs {
        if s.tokens.len() > length {
            return Err(Error::Shape(format!("instruction longer than {length} tokens")));
        }
        for j in 0..length {
            let t = s.tokens.get(j).copied().unwrap_or(PAD);
            ids.push(t as u32);
            keep.push(if t == PAD { 0f32 } else { 1.0 });
        }
    }
    let n = seqs.len();
    Ok((Tensor::from_vec(ids, (n, length), &Device::Cpu)?, Tensor::from_vec(keep, (n, length), &Device::Cpu)?.to_dtype(dtype)?))
}

/// Padded steps `[N, T, 4]` and validity mask `[N, T]`.
pub fn trajectory_tensors(trajs: &[&Trajectory], dtype: DType) -> Result<(Tensor, Tensor)> {
    let t = trajs.iter().map(|x| x.len()).max().unwrap_or(0);
    if t == 0 {
        return Err(Error::EmptySequence("no valid trajectory steps".into()));
    }
    let mut data = Vec::with_capacity(trajs.len() * t * 4);
    let mut mask = Vec::with_capacity(trajs.len() * t);
    for x in trajs {
        let (d, m) = x.padded(t);
        data.extend(d);
        mask.extend(m.into_iter().map(f32::from));
    }
    let n = trajs.len();
    Ok((
        Tensor::from_vec(data, (n, t, 4), &Device::Cpu)?.to_dtype(dtype)?,
        Tensor::from_vec(mask, (n, t), &Device::Cpu)?.to_dtype(dtype)?,
    ))
}
