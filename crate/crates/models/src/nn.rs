//! Parameter storage and the few layers the codecs are built from.
//!
//! Parameters are created through [`ParamStore`], which draws initial
//! values from a seeded stream so that model construction is reproducible.

use std::collections::BTreeMap;

use candle_core::{CpuStorage, CustomOp1, DType, Device, Layout, Module, Shape, Storage, Tensor, Var, WithDType, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;

pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(dtype: DType, seed: [u8; 32]) -> Self {
        Self { vars: BTreeMap::new(), dtype, device: Device::Cpu, rng: ChaCha8Rng::from_seed(seed) }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    pub fn num_params(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    fn register(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        assert!(!self.vars.contains_key(name), "duplicate parameter {name}");
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(out)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<Tensor> {
        let n = shape.iter().product();
        let values = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.register(name, shape, values)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<Tensor> {
        let n = shape.iter().product();
        let values = (0..n).map(|_| std * self.rng.sample::<f64, _>(StandardNormal)).collect();
        self.register(name, shape, values)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Tensor> {
        let n = shape.iter().product();
        self.register(name, shape, vec![value; n])
    }

    pub fn linear(&mut self, name: &str, d_in: usize, d_out: usize) -> Result<Linear> {
        let bound = 1.0 / (d_in as f64).sqrt();
        let w = self.uniform(&format!("{name}.weight"), &[d_out, d_in], bound)?;
        let b = self.uniform(&format!("{name}.bias"), &[d_out], bound)?;
        Ok(Linear { weight_t: w.t()?, bias: b })
    }

    pub fn conv2d(
        &mut self,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Conv2d> {
        let bound = 1.0 / ((c_in * kernel * kernel) as f64).sqrt();
        let weight = self.uniform(&format!("{name}.weight"), &[c_out, c_in, kernel, kernel], bound)?;
        let bias = self.uniform(&format!("{name}.bias"), &[c_out], bound)?;
        Ok(Conv2d { weight, bias, stride, padding })
    }

    pub fn layer_norm(&mut self, name: &str, dim: usize) -> Result<LayerNorm> {
        let weight = self.constant(&format!("{name}.weight"), &[dim], 1.0)?;
        let bias = self.constant(&format!("{name}.bias"), &[dim], 0.0)?;
        Ok(LayerNorm { weight, bias, eps: 1e-5 })
    }
}

/// Affine map over the last dimension. Leading dimensions are flattened so
/// the weight gradient is a single matrix product.
#[derive(Clone, Debug)]
pub struct Linear {
    weight_t: Tensor,
    bias: Tensor,
}

impl Module for Linear {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let dims = x.dims().to_vec();
        let d_in = *dims.last().expect("linear input has a feature axis");
        let rows = x.elem_count() / d_in;
        let y = x.reshape((rows, d_in))?.matmul(&self.weight_t)?.broadcast_add(&self.bias)?;
        let mut out = dims;
        *out.last_mut().expect("non-empty") = y.dim(1)?;
        y.reshape(out)
    }
}

/// Layer normalization over the last dimension, composed from primitive
/// ops so that it is differentiable.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl Module for LayerNorm {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        normed.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)
    }
}

/// 2-D convolution computed as patch extraction followed by a matrix
/// product. Only the patch extraction needs a hand-written backward pass;
/// candle's built-in convolution gradient is wrong for these layers.
#[derive(Clone, Debug)]
pub struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
}

impl Module for Conv2d {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let (n, _, h, w) = x.dims4()?;
        let (c_out, c_in, k, _) = self.weight.dims4()?;
        let geom = Unfold { channels: c_in, height: h, width: w, kernel: k, stride: self.stride, padding: self.padding };
        let (ho, wo) = geom.output_size();
        let cols = x.contiguous()?.apply_op1(geom)?;
        let y = cols.matmul(&self.weight.reshape((c_out, c_in * k * k))?.t()?)?.broadcast_add(&self.bias)?;
        y.reshape((n, ho, wo, c_out))?.permute((0, 3, 1, 2))
    }
}

/// Patch extraction: maps `[N, C, H, W]` to `[N * Ho * Wo, C * k * k]`, one
/// row per output position with columns ordered like a flattened kernel.
#[derive(Clone, Copy, Debug)]
struct Unfold {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
}

impl Unfold {
    fn output_size(&self) -> (usize, usize) {
        let out = |side: usize| (side + 2 * self.padding - self.kernel) / self.stride + 1;
        (out(self.height), out(self.width))
    }

    /// Visits every (row, column, source offset) triple whose source pixel
    /// lies inside the image.
    fn for_each(&self, n: usize, mut f: impl FnMut(usize, usize)) {
        let (ho, wo) = self.output_size();
        let (c, h, w, k) = (self.channels, self.height, self.width, self.kernel);
        let row_len = c * k * k;
        for b in 0..n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let row = ((b * ho + oy) * wo + ox) * row_len;
                    for ch in 0..c {
                        let plane = (b * c + ch) * h * w;
                        for ky in 0..k {
                            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                f(row + (ch * k + ky) * k + kx, plane + iy as usize * w + ix as usize);
                            }
                        }
                    }
                }
            }
        }
    }

    fn unfold<T: WithDType>(&self, x: &[T], n: usize) -> Vec<T> {
        let (ho, wo) = self.output_size();
        let mut cols = vec![T::zero(); n * ho * wo * self.channels * self.kernel * self.kernel];
        self.for_each(n, |dst, src| cols[dst] = x[src]);
        cols
    }

    fn fold<T: WithDType>(&self, cols: &[T], n: usize) -> Vec<T> {
        let mut x = vec![T::zero(); n * self.channels * self.height * self.width];
        self.for_each(n, |src, dst| x[dst] += cols[src]);
        x
    }
}

fn contiguous_slice<'a, T>(v: &'a [T], l: &Layout) -> candle_core::Result<&'a [T]> {
    let (start, end) =
        l.contiguous_offsets().ok_or_else(|| candle_core::Error::Msg("unfold expects a contiguous input".into()))?;
    Ok(&v[start..end])
}

impl CustomOp1 for Unfold {
    fn name(&self) -> &'static str {
        "unfold"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let n = l.dims()[0];
        let (ho, wo) = self.output_size();
        let shape = Shape::from((n * ho * wo, self.channels * self.kernel * self.kernel));
        let out = match s {
            CpuStorage::F32(v) => CpuStorage::F32(self.unfold(contiguous_slice(v, l)?, n)),
            CpuStorage::F64(v) => CpuStorage::F64(self.unfold(contiguous_slice(v, l)?, n)),
            _ => return Err(candle_core::Error::Msg("convolution supports f32 and f64".into())),
        };
        Ok((out, shape))
    }

    fn bwd(&self, x: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let n = x.dim(0)?;
        let grad = grad.contiguous()?;
        let (storage, layout) = grad.storage_and_layout();
        let shape = (n, self.channels, self.height, self.width);
        let out = match &*storage {
            Storage::Cpu(CpuStorage::F32(v)) => Tensor::from_vec(self.fold(contiguous_slice(v, layout)?, n), shape, x.device())?,
            Storage::Cpu(CpuStorage::F64(v)) => Tensor::from_vec(self.fold(contiguous_slice(v, layout)?, n), shape, x.device())?,
            _ => return Err(candle_core::Error::Msg("convolution supports f32 and f64 on cpu".into())),
        };
        Ok(Some(out))
    }
}

pub fn sigmoid(x: &Tensor) -> candle_core::Result<Tensor> {
    candle_nn::ops::sigmoid(x)
}

/// Additive attention bias: 0 where `keep` is set, a large negative value
/// elsewhere. `keep` is `[B, T]` of 0/1.
pub fn key_bias(keep: &Tensor) -> candle_core::Result<Tensor> {
    (keep.ones_like()? - keep)? * -1e9
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finite_difference(f: &dyn Fn(&Tensor) -> f64, t: &Tensor, i: usize) -> f64 {
        let h = 1e-6;
        let bump = |e: f64| {
            let mut v: Vec<f64> = t.flatten_all().unwrap().to_vec1().unwrap();
            v[i] += e;
            Tensor::from_vec(v, t.shape(), &Device::Cpu).unwrap()
        };
        (f(&bump(h)) - f(&bump(-h))) / (2.0 * h)
    }

    fn check(kernel: usize, stride: usize, padding: usize, side: usize) {
        let mut ps = ParamStore::new(DType::F64, [3u8; 32]);
        let conv = ps.conv2d("c", 3, 5, kernel, stride, padding).unwrap();
        let x = Var::from_tensor(&Tensor::randn(0f64, 1.0, (2, 3, side, side), &Device::Cpu).unwrap()).unwrap();
        let y = conv.forward(x.as_tensor()).unwrap();
        let reference = x.as_tensor().conv2d(&conv.weight, padding, stride, 1, 1).unwrap();
        let reference = reference.broadcast_add(&conv.bias.reshape((1, 5, 1, 1)).unwrap()).unwrap();
        let diff = (&y - &reference).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(diff < 1e-12);
        let target = Tensor::randn(0f64, 1.0, y.shape(), &Device::Cpu).unwrap();
        let grads = (y * &target).unwrap().sum_all().unwrap().backward().unwrap();
        let loss = |xx: &Tensor, ww: &Tensor| -> f64 {
            let c = Conv2d { weight: ww.clone(), bias: conv.bias.clone(), stride, padding };
            (c.forward(xx).unwrap() * &target).unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap()
        };
        let gx: Vec<f64> = grads.get(x.as_tensor()).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let gw: Vec<f64> = grads.get(&conv.weight).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        for i in [0, 7, 19, gx.len() - 1] {
            let fd = finite_difference(&|t| loss(t, &conv.weight), x.as_tensor(), i);
            assert!((gx[i] - fd).abs() < 1e-6, "input grad {i}: {} vs {fd}", gx[i]);
        }
        for i in [0, 5, gw.len() - 1] {
            let fd = finite_difference(&|t| loss(x.as_tensor(), t), &conv.weight, i);
            assert!((gw[i] - fd).abs() < 1e-6, "kernel grad {i}: {} vs {fd}", gw[i]);
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        check(3, 1, 1, 6);
        check(4, 2, 1, 8);
        check(3, 2, 1, 7);
    }

    #[test]
    fn layer_norm_normalizes() {
        let mut ps = ParamStore::new(DType::F64, [0u8; 32]);
        let ln = ps.layer_norm("n", 4).unwrap();
        let x = Tensor::new(&[[1.0f64, 2.0, 3.0, 6.0]], &Device::Cpu).unwrap();
        let y: Vec<f64> = ln.forward(&x).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let mean = y.iter().sum::<f64>() / 4.0;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn init_is_seeded() {
        let a = ParamStore::new(DType::F32, [9u8; 32]).uniform("w", &[3, 3], 1.0).unwrap();
        let b = ParamStore::new(DType::F32, [9u8; 32]).uniform("w", &[3, 3], 1.0).unwrap();
        let d = (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert_eq!(d, 0.0);
    }
}
