//! Factorized Gaussians over the latent space.
//!
//! Every posterior, expert and fused component is a [`DiagonalGaussian`].
//! The log-variance is clamped on construction so that precision-space
//! arithmetic in the fusion code never sees an infinite precision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LOG_2PI: f64 = 1.837_877_066_409_345_3;

/// Admissible log-variance interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogVarRange {
    pub min: f64,
    pub max: f64,
}

impl Default for LogVarRange {
    fn default() -> Self {
        Self { min: -10.0, max: 10.0 }
    }
}

impl LogVarRange {
    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.min, self.max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagonalGaussian {
    mean: Vec<f64>,
    log_var: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn new(mean: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        Self::with_range(mean, log_var, LogVarRange::default())
    }

    pub fn with_range(mean: Vec<f64>, log_var: Vec<f64>, range: LogVarRange) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::Shape("latent dimension must be at least 1".into()));
        }
        if mean.len() != log_var.len() {
            return Err(Error::Shape(format!(
                "mean has {} entries but log_var has {}",
                mean.len(),
                log_var.len()
            )));
        }
        if let Some(d) = mean.iter().chain(&log_var).position(|v| !v.is_finite()) {
            return Err(Error::InvalidDistribution(format!("non-finite parameter at flat index {d}")));
        }
        let log_var = log_var.into_iter().map(|v| range.clamp(v)).collect();
        Ok(Self { mean, log_var })
    }

    /// The prior `N(0, I)`.
    pub fn standard(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], log_var: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_var(&self) -> &[f64] {
        &self.log_var
    }

    pub fn variance(&self) -> Vec<f64> {
        self.log_var.iter().map(|lv| lv.exp()).collect()
    }

    pub fn precision(&self) -> Vec<f64> {
        self.log_var.iter().map(|lv| (-lv).exp()).collect()
    }

    /// `KL(q || N(0, I))` in nats.
    pub fn kl_to_standard_normal(&self) -> f64 {
        0.5 * self
            .mean
            .iter()
            .zip(&self.log_var)
            .map(|(m, lv)| lv.exp() + m * m - 1.0 - lv)
            .sum::<f64>()
    }

    /// Analytic gradient of [`Self::kl_to_standard_normal`] with respect to
    /// `(mean, log_var)`.
    pub fn kl_gradient(&self) -> (Vec<f64>, Vec<f64>) {
        let d_mean = self.mean.clone();
        let d_log_var = self.log_var.iter().map(|lv| 0.5 * (lv.exp() - 1.0)).collect();
        (d_mean, d_log_var)
    }

    pub fn reparam_sample(&self, noise: &[f64]) -> Result<Vec<f64>> {
        self.check_len(noise.len(), "noise")?;
        Ok(self
            .mean
            .iter()
            .zip(&self.log_var)
            .zip(noise)
            .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
            .collect())
    }

    pub fn log_prob(&self, z: &[f64]) -> Result<f64> {
        self.check_len(z.len(), "z")?;
        Ok(self
            .mean
            .iter()
            .zip(&self.log_var)
            .zip(z)
            .map(|((m, lv), x)| -0.5 * LOG_2PI - 0.5 * lv - 0.5 * (x - m).powi(2) / lv.exp())
            .sum())
    }

    fn check_len(&self, len: usize, what: &str) -> Result<()> {
        if len != self.dim() {
            return Err(Error::Shape(format!("{what} has length {len}, expected {}", self.dim())));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn g(mean: &[f64], log_var: &[f64]) -> DiagonalGaussian {
        DiagonalGaussian::new(mean.to_vec(), log_var.to_vec()).unwrap()
    }

    #[test]
    fn kl_examples() {
        assert_eq!(g(&[0.0], &[0.0]).kl_to_standard_normal(), 0.0);
        assert_abs_diff_eq!(g(&[2.0], &[0.0]).kl_to_standard_normal(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g(&[0.0], &[2f64.ln()]).kl_to_standard_normal(), 0.15343, epsilon = 1e-5);
    }

    #[test]
    fn kl_matches_grid_integration() {
        // KL integrand q(z) (log q(z) - log p(z)) on [-10, 10].
        let q = g(&[0.0], &[2f64.ln()]);
        let p = DiagonalGaussian::standard(1);
        let n = 200_000;
        let h = 20.0 / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let z = -10.0 + i as f64 * h;
            let lq = q.log_prob(&[z]).unwrap();
            let lp = p.log_prob(&[z]).unwrap();
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            acc += w * lq.exp() * (lq - lp);
        }
        assert_abs_diff_eq!(acc * h, q.kl_to_standard_normal(), epsilon = 1e-7);
    }

    #[test]
    fn reparam_examples() {
        assert_eq!(g(&[1.0, 1.0], &[0.0, 0.0]).reparam_sample(&[0.0, 0.0]).unwrap(), vec![1.0, 1.0]);
        assert_abs_diff_eq!(g(&[0.0], &[4f64.ln()]).reparam_sample(&[1.0]).unwrap()[0], 2.0, epsilon = 1e-12);
        assert_eq!(g(&[3.0], &[0.0]).reparam_sample(&[-1.5]).unwrap(), vec![1.5]);
        assert!(matches!(g(&[0.0], &[0.0]).reparam_sample(&[1.0, 2.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn log_prob_examples() {
        assert_abs_diff_eq!(g(&[0.0], &[0.0]).log_prob(&[0.0]).unwrap(), -0.91894, epsilon = 1e-5);
        assert_abs_diff_eq!(g(&[0.0], &[0.0]).log_prob(&[1.0]).unwrap(), -1.41894, epsilon = 1e-5);
        assert_abs_diff_eq!(g(&[1.0, 1.0], &[0.0, 0.0]).log_prob(&[1.0, 1.0]).unwrap(), -1.83788, epsilon = 1e-5);
        assert!(g(&[0.0], &[0.0]).log_prob(&[]).is_err());
    }

    #[test]
    fn construction_validates_and_clamps() {
        assert!(matches!(DiagonalGaussian::new(vec![f64::NAN], vec![0.0]), Err(Error::InvalidDistribution(_))));
        assert!(matches!(DiagonalGaussian::new(vec![0.0], vec![f64::INFINITY]), Err(Error::InvalidDistribution(_))));
        assert!(matches!(DiagonalGaussian::new(vec![0.0, 1.0], vec![0.0]), Err(Error::Shape(_))));
        assert!(DiagonalGaussian::new(vec![], vec![]).is_err());
        let q = g(&[0.0, 0.0], &[-50.0, 50.0]);
        assert_eq!(q.log_var(), &[-10.0, 10.0]);
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let q = g(&[0.7, -1.3, 2.1], &[0.4, -1.1, 1.7]);
        let (gm, glv) = q.kl_gradient();
        let h = 1e-5;
        for d in 0..3 {
            for (which, analytic) in [(0, gm[d]), (1, glv[d])] {
                let mut m = q.mean().to_vec();
                let mut lv = q.log_var().to_vec();
                let (mut mp, mut lvp) = (m.clone(), lv.clone());
                if which == 0 {
                    mp[d] += h;
                    m[d] -= h;
                } else {
                    lvp[d] += h;
                    lv[d] -= h;
                }
                let fd = (g(&mp, &lvp).kl_to_standard_normal() - g(&m, &lv).kl_to_standard_normal()) / (2.0 * h);
                let rel = (fd - analytic).abs() / analytic.abs().max(1e-12);
                assert!(rel < 1e-5, "dim {d} which {which}: fd {fd} analytic {analytic}");
            }
        }
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative(mean in prop::collection::vec(-5.0f64..5.0, 1..6), seed in 0u64..1000) {
            let lv: Vec<f64> = mean.iter().enumerate().map(|(i, _)| ((seed + i as u64) % 13) as f64 * 0.5 - 3.0).collect();
            let q = g(&mean, &lv);
            prop_assert!(q.kl_to_standard_normal() >= 0.0);
        }

        #[test]
        fn kl_zero_only_at_prior(m in -3.0f64..3.0, lv in -3.0f64..3.0) {
            let kl = g(&[m], &[lv]).kl_to_standard_normal();
            if m.abs() > 1e-3 || lv.abs() > 1e-3 {
                prop_assert!(kl > 0.0);
            }
        }
    }
}
