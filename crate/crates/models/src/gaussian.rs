//! Batched diagonal Gaussians on tensors.

use candle_core::{Tensor, D};
use mmvae_core::distributions::LOG_2PI;

use crate::error::Result;

/// A batch of diagonal Gaussians: `mean` and `log_var` are `[B, Dz]`.
#[derive(Clone, Debug)]
pub struct GaussianBatch {
    pub mean: Tensor,
    pub log_var: Tensor,
}

impl GaussianBatch {
    pub fn new(mean: Tensor, log_var: Tensor) -> Self {
        Self { mean, log_var }
    }

    pub fn batch(&self) -> Result<usize> {
        Ok(self.mean.dim(0)?)
    }

    pub fn detach(&self) -> Self {
        Self { mean: self.mean.detach(), log_var: self.log_var.detach() }
    }

    /// Closed-form KL to the standard normal, one value per datum.
    pub fn kl_to_standard(&self) -> Result<Tensor> {
        let t = ((self.log_var.exp()? + self.mean.sqr()?)? - &self.log_var)?;
        Ok(((t - 1.0)?.sum(D::Minus1)? * 0.5)?)
    }

    pub fn sample(&self, eps: &Tensor) -> Result<Tensor> {
        Ok((&self.mean + (self.log_var.clone() * 0.5)?.exp()?.mul(eps)?)?)
    }

    /// Log density of `z` (`[..., B, Dz]`), summed over the last dimension.
    pub fn log_prob(&self, z: &Tensor) -> Result<Tensor> {
        let diff = z.broadcast_sub(&self.mean)?;
        let quad = diff.sqr()?.broadcast_div(&self.log_var.exp()?)?;
        let t = quad.broadcast_add(&self.log_var)?;
        Ok(((t + LOG_2PI)?.sum(D::Minus1)? * -0.5)?)
    }

    /// Precision-weighted product of experts, optionally with a standard
    /// normal prior expert. The fused log-variance is clamped to the range.
    pub fn product(experts: &[&GaussianBatch], include_prior: bool, range: (f64, f64)) -> Result<Self> {
        assert!(!experts.is_empty(), "product needs at least one expert");
        if experts.len() == 1 && !include_prior {
            return Ok(experts[0].clone());
        }
        let mut precision: Option<Tensor> = None;
        let mut weighted: Option<Tensor> = None;
        for e in experts {
            let p = e.log_var.neg()?.exp()?;
            let wm = (&e.mean * &p)?;
            precision = Some(match precision {
                None => p,
                Some(acc) => (acc + p)?,
            });
            weighted = Some(match weighted {
                None => wm,
                Some(acc) => (acc + wm)?,
            });
        }
        let (precision, weighted) = match (precision, weighted) {
            (Some(p), Some(w)) => ((if include_prior { (p + 1.0)? } else { p }), w),
            _ => unreachable!("prior-only products are built by the caller"),
        };
        let mean = (weighted / &precision)?;
        let log_var = precision.log()?.neg()?.clamp(range.0, range.1)?;
        Ok(Self { mean, log_var })
    }

    /// The standard normal for a batch shaped like `like`.
    pub fn standard_like(like: &Tensor) -> Result<Self> {
        Ok(Self { mean: like.zeros_like()?, log_var: like.zeros_like()? })
    }

    /// Select data rows by index.
    pub fn index_select(&self, idx: &Tensor) -> Result<Self> {
        Ok(Self { mean: self.mean.index_select(idx, 0)?, log_var: self.log_var.index_select(idx, 0)? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};
    use mmvae_core::fusion::product_of;
    use mmvae_core::{DiagonalGaussian, LogVarRange};

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_slice(v, (1, v.len()), &Device::Cpu).unwrap()
    }

    fn row(x: &Tensor) -> Vec<f64> {
        x.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap()
    }

    #[test]
    fn matches_scalar_library() {
        let a = DiagonalGaussian::new(vec![0.3, -1.0], vec![0.2, -0.4]).unwrap();
        let b = DiagonalGaussian::new(vec![1.5, 0.5], vec![-1.0, 0.7]).unwrap();
        let ta = GaussianBatch::new(t(a.mean()), t(a.log_var()));
        let tb = GaussianBatch::new(t(b.mean()), t(b.log_var()));
        assert!((row(&ta.kl_to_standard().unwrap())[0] - a.kl_to_standard_normal()).abs() < 1e-12);
        let z = [0.1, 0.9];
        assert!((row(&ta.log_prob(&t(&z)).unwrap())[0] - a.log_prob(&z).unwrap()).abs() < 1e-12);
        for prior in [false, true] {
            let p = GaussianBatch::product(&[&ta, &tb], prior, (-10.0, 10.0)).unwrap();
            let q = product_of(&[&a, &b], prior, LogVarRange::default()).unwrap();
            for (x, y) in row(&p.mean).iter().zip(q.mean()) {
                assert!((x - y).abs() < 1e-12);
            }
            for (x, y) in row(&p.log_var).iter().zip(q.log_var()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
