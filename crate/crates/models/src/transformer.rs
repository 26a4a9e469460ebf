//! Pre-norm transformer blocks with additive key masking.

use candle_core::{Module, Tensor, D};

use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear, ParamStore};

/// Sinusoidal positional encoding as a `length × width` row-major matrix.
pub fn positional_encoding(length: usize, width: usize) -> Result<Vec<f64>> {
    if width == 0 || width % 2 != 0 {
        return Err(Error::Config(format!("positional encoding width must be even and positive, got {width}")));
    }
    let mut out = vec![0.0; length * width];
    for t in 0..length {
        for i in 0..width / 2 {
            let angle = t as f64 / 10000f64.powf(2.0 * i as f64 / width as f64);
            out[t * width + 2 * i] = angle.sin();
            out[t * width + 2 * i + 1] = angle.cos();
        }
    }
    Ok(out)
}

/// `[1, 1, T, T]` bias that hides future positions.
pub(crate) fn causal_bias(length: usize, like: &Tensor) -> Result<Tensor> {
    let mut v = vec![0.0f64; length * length];
    for i in 0..length {
        for j in i + 1..length {
            v[i * length + j] = -1e9;
        }
    }
    Ok(Tensor::from_vec(v, (1, 1, length, length), like.device())?.to_dtype(like.dtype())?)
}

/// `[B, 1, 1, T]` bias from a `[B, T]` 0/1 keep mask.
pub(crate) fn key_padding_bias(keep: &Tensor) -> Result<Tensor> {
    let (b, t) = keep.dims2()?;
    Ok(crate::nn::key_bias(keep)?.reshape((b, 1, 1, t))?)
}

pub(crate) fn positional_tensor(length: usize, width: usize, like: &Tensor) -> Result<Tensor> {
    let pe = positional_encoding(length, width)?;
    Ok(Tensor::from_vec(pe, (length, width), like.device())?.to_dtype(like.dtype())?)
}

pub struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl Attention {
    pub fn new(ps: &mut ParamStore, name: &str, width: usize, heads: usize) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::Config(format!("width {width} is not divisible into {heads} heads")));
        }
        Ok(Self {
            q: ps.linear(&format!("{name}.q"), width, width)?,
            k: ps.linear(&format!("{name}.k"), width, width)?,
            v: ps.linear(&format!("{name}.v"), width, width)?,
            o: ps.linear(&format!("{name}.o"), width, width)?,
            heads,
        })
    }

    /// `x`: `[B, Tq, W]`, `mem`: `[B, Tk, W]`. `bias` is an additive score
    /// bias broadcastable to `[B, heads, Tq, Tk]`.
    pub fn forward(&self, x: &Tensor, mem: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let (b, tq, w) = x.dims3()?;
        let tk = mem.dim(1)?;
        let dh = w / self.heads;
        let split = |t: Tensor, len: usize| -> candle_core::Result<Tensor> {
            t.reshape((b, len, self.heads, dh))?.transpose(1, 2)?.contiguous()
        };
        let q = split(self.q.forward(x)?, tq)?;
        let k = split(self.k.forward(mem)?, tk)?;
        let v = split(self.v.forward(mem)?, tk)?;
        let mut scores = (q.matmul(&k.t()?)? / (dh as f64).sqrt())?;
        if let Some(bias) = bias {
            scores = scores.broadcast_add(bias)?;
        }
        let att = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let out = att.matmul(&v)?.transpose(1, 2)?.reshape((b, tq, w))?;
        Ok(self.o.forward(&out)?)
    }
}

struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    fn new(ps: &mut ParamStore, name: &str, width: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            up: ps.linear(&format!("{name}.up"), width, hidden)?,
            down: ps.linear(&format!("{name}.down"), hidden, width)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.down.forward(&self.up.forward(x)?.relu()?)?)
    }
}

pub struct EncoderLayer {
    norm1: LayerNorm,
    attn: Attention,
    norm2: LayerNorm,
    ff: FeedForward,
}

impl EncoderLayer {
    pub fn new(ps: &mut ParamStore, name: &str, width: usize, heads: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            norm1: ps.layer_norm(&format!("{name}.norm1"), width)?,
            attn: Attention::new(ps, &format!("{name}.attn"), width, heads)?,
            norm2: ps.layer_norm(&format!("{name}.norm2"), width)?,
            ff: FeedForward::new(ps, &format!("{name}.ff"), width, hidden)?,
        })
    }

    pub fn forward(&self, x: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let h = self.norm1.forward(x)?;
        let x = (x + self.attn.forward(&h, &h, bias)?)?;
        let h = self.norm2.forward(&x)?;
        Ok((&x + self.ff.forward(&h)?)?)
    }
}

pub struct DecoderLayer {
    norm1: LayerNorm,
    self_attn: Attention,
    norm2: LayerNorm,
    cross_attn: Attention,
    norm3: LayerNorm,
    ff: FeedForward,
}

impl DecoderLayer {
    pub fn new(ps: &mut ParamStore, name: &str, width: usize, heads: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            norm1: ps.layer_norm(&format!("{name}.norm1"), width)?,
            self_attn: Attention::new(ps, &format!("{name}.self_attn"), width, heads)?,
            norm2: ps.layer_norm(&format!("{name}.norm2"), width)?,
            cross_attn: Attention::new(ps, &format!("{name}.cross_attn"), width, heads)?,
            norm3: ps.layer_norm(&format!("{name}.norm3"), width)?,
            ff: FeedForward::new(ps, &format!("{name}.ff"), width, hidden)?,
        })
    }

    pub fn forward(&self, x: &Tensor, memory: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let h = self.norm1.forward(x)?;
        let x = (x + self.self_attn.forward(&h, &h, bias)?)?;
        let h = self.norm2.forward(&x)?;
        let x = (&x + self.cross_attn.forward(&h, memory, None)?)?;
        let h = self.norm3.forward(&x)?;
        Ok((&x + self.ff.forward(&h)?)?)
    }
}
