//! Scalar reference implementations of the reconstruction terms. The
//! tensor versions used in training are checked against these.

use crate::distributions::LOG_2PI;
use crate::error::{Error, Result};

fn check_shapes(x: &[f64], mu: &[f64]) -> Result<()> {
    if x.len() != mu.len() {
        return Err(Error::Shape(format!("target has {} elements, mean has {}", x.len(), mu.len())));
    }
    if x.is_empty() {
        return Err(Error::EmptySequence("reconstruction over zero elements".into()));
    }
    Ok(())
}

/// `(1/D) Σ (x_i - μ_i)²`.
pub fn mse_recon(x: &[f64], mu: &[f64]) -> Result<f64> {
    check_shapes(x, mu)?;
    Ok(x.iter().zip(mu).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64)
}

/// Negative log-likelihood of `x` under `N(μ, σ² I)`.
pub fn gaussian_nll(x: &[f64], mu: &[f64], variance: f64) -> Result<f64> {
    let mse = mse_recon(x, mu)?;
    let d = x.len() as f64;
    Ok(0.5 * d * ((2.0 * std::f64::consts::PI * variance).ln() + mse / variance))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SigmaVaeLoss {
    pub loss: f64,
    /// The variance the loss was evaluated at, `max(MSE, σ²_min)`.
    pub variance: f64,
}

/// Gaussian NLL at the analytically optimal shared variance
/// `σ*² = max(MSE(x, μ), sigma_min_sq)`.
pub fn sigma_vae_recon(x: &[f64], mu: &[f64], sigma_min_sq: f64) -> Result<SigmaVaeLoss> {
    if !(sigma_min_sq > 0.0) {
        return Err(Error::Config(format!("sigma_min_sq must be positive, got {sigma_min_sq}")));
    }
    let mse = mse_recon(x, mu)?;
    let variance = mse.max(sigma_min_sq);
    let d = x.len() as f64;
    let loss = 0.5 * d * (LOG_2PI + variance.ln() + mse / variance);
    Ok(SigmaVaeLoss { loss, variance })
}

pub fn logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = logsumexp(logits);
    logits.iter().map(|l| l - lse).collect()
}

/// Mean over unmasked positions of `-log softmax(logits_t)[target_t]`.
/// `keep[t]` is true for positions that count.
pub fn categorical_recon(logits: &[Vec<f64>], targets: &[usize], keep: &[bool]) -> Result<f64> {
    if logits.len() != targets.len() || targets.len() != keep.len() {
        return Err(Error::Shape(format!(
            "{} logit rows, {} targets, {} mask entries",
            logits.len(),
            targets.len(),
            keep.len()
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for ((row, &t), &k) in logits.iter().zip(targets).zip(keep) {
        if !k {
            continue;
        }
        if t >= row.len() {
            return Err(Error::Vocabulary { token: t, size: row.len() });
        }
        total -= log_softmax(row)[t];
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptySequence("every text position is masked".into()));
    }
    Ok(total / count as f64)
}
