//! Reconstruction terms, the multimodal ELBO and the importance-weighted
//! bound with doubly reparameterized gradients.

use std::collections::BTreeMap;

use candle_core::{DType, Tensor, D};
use mmvae_core::distributions::LOG_2PI;
use mmvae_core::fusion::{powerset, subset_schedule};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::{Modality, ModelKind, ObjectiveKind, ReconKind};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::gaussian::GaussianBatch;
use crate::model::MultimodalVae;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub recon: BTreeMap<Modality, f64>,
    pub kl: f64,
    pub objective_kind: ObjectiveKind,
}

/// Scalar graph(s) to differentiate. The split form carries separate
/// surrogates for decoder and encoder parameters.
pub enum Surrogate {
    Joint(Tensor),
    Split { decoder: Tensor, encoder: Tensor },
}

pub struct Objective {
    pub breakdown: LossBreakdown,
    pub surrogate: Surrogate,
}

/// Whether a reconstruction term is reported as a loss to minimize or as a
/// log-likelihood that enters importance weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReconMode {
    Loss,
    LogLikelihood,
}

pub fn standard_normal(rng: &mut impl Rng, shape: &[usize], dtype: DType) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Ok(Tensor::from_vec(v, shape, &candle_core::Device::Cpu)?.to_dtype(dtype)?)
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Log-sum-exp over dimension 0.
pub fn logsumexp0(x: &Tensor) -> Result<Tensor> {
    let m = x.max_keepdim(0)?.detach();
    Ok((x.broadcast_sub(&m)?.exp()?.sum_keepdim(0)?.log()? + m)?.squeeze(0)?)
}

/// Per-row squared errors and element counts for predictions `[N, ...]`
/// against targets `[B, ...]`, `N` a multiple of `B`. `mask` is `[B, T]` for
/// sequence targets shaped `[B, T, C]`.
fn squared_errors(mu: &Tensor, x: &Tensor, mask: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
    let n = mu.dim(0)?;
    let b = x.dim(0)?;
    if n % b != 0 || mu.dims()[1..] != x.dims()[1..] {
        return Err(Error::Shape(format!("prediction {:?} does not match target {:?}", mu.dims(), x.dims())));
    }
    let r = n / b;
    let flat_x = x.flatten_from(1)?;
    let e = flat_x.dim(1)?;
    let diff = mu.reshape((r, b, e))?.broadcast_sub(&flat_x)?;
    let mut sq = diff.sqr()?;
    let counts = match mask {
        Some(m) => {
            let c = x.dim(2)?;
            let full = m.unsqueeze(2)?.broadcast_as(x.shape())?.flatten_from(1)?;
            sq = sq.broadcast_mul(&full)?;
            (m.sum(1)? * c as f64)?
        }
        None => Tensor::full(e as f64, b, x.device())?.to_dtype(x.dtype())?,
    };
    let sse = sq.sum(2)?.reshape(n)?;
    let counts = counts.unsqueeze(0)?.broadcast_as((r, b))?.reshape(n)?;
    Ok((sse, counts))
}

/// Reconstruction for a real-valued modality, one value per row.
///
/// Rows are split into `groups` equal consecutive blocks; under σ-VAE each
/// block gets its own detached variance estimate.
pub fn real_recon(
    kind: ReconKind,
    mode: ReconMode,
    mu: &Tensor,
    x: &Tensor,
    mask: Option<&Tensor>,
    sigma_min_sq: f64,
    groups: usize,
) -> Result<Tensor> {
    let (sse, counts) = squared_errors(mu, x, mask)?;
    match (kind, mode) {
        (ReconKind::Mse, ReconMode::Loss) => Ok((sse / counts)?),
        (ReconKind::Mse, ReconMode::LogLikelihood) => Ok(((sse + (counts * LOG_2PI)?)? * -0.5)?),
        (ReconKind::SigmaVae, _) => {
            let n = sse.dim(0)?;
            if groups == 0 || n % groups != 0 {
                return Err(Error::Shape(format!("{n} rows cannot form {groups} groups")));
            }
            let per = n / groups;
            let sse_g: Vec<f64> = sse.detach().reshape((groups, per))?.sum(1)?.to_dtype(DType::F64)?.to_vec1()?;
            let cnt_g: Vec<f64> = counts.reshape((groups, per))?.sum(1)?.to_dtype(DType::F64)?.to_vec1()?;
            let mut var = Vec::with_capacity(n);
            for (s, c) in sse_g.iter().zip(&cnt_g) {
                var.extend(std::iter::repeat_n((s / c).max(sigma_min_sq), per));
            }
            let var = Tensor::from_vec(var, n, sse.device())?.to_dtype(sse.dtype())?;
            let log_term = (var.affine(2.0 * std::f64::consts::PI, 0.0)?.log()? * &counts)?;
            let nll = ((log_term + (sse / var)?)? * 0.5)?;
            Ok(if mode == ReconMode::Loss { nll } else { nll.neg()? })
        }
    }
}

/// Categorical text term for logits `[N, L, V]`: the mean negative
/// log-probability over scored positions as a loss, their sum as a log-likelihood.
pub fn text_recon(mode: ReconMode, logits: &Tensor, onehot: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let (n, l, v) = logits.dims3()?;
    let b = onehot.dim(0)?;
    if n % b != 0 || onehot.dims()[1..] != [l, v] {
        return Err(Error::Shape(format!("logits {:?} do not match targets {:?}", logits.dims(), onehot.dims())));
    }
    let counts: Vec<f64> = mask.sum(1)?.to_dtype(DType::F64)?.to_vec1()?;
    if counts.iter().any(|&c| c < 0.5) {
        return Err(Error::EmptySequence("a text target has no scored positions".into()));
    }
    let lsm = candle_nn::ops::log_softmax(logits, D::Minus1)?.reshape((n / b, b, l, v))?;
    let nll = lsm.broadcast_mul(onehot)?.sum(3)?.neg()?.broadcast_mul(mask)?.sum(2)?;
    let out = match mode {
        ReconMode::Loss => nll.broadcast_div(&mask.sum(1)?)?,
        ReconMode::LogLikelihood => nll.neg()?,
    };
    Ok(out.reshape(n)?)
}

/// Decode `z` (`[N, Dz]`, `N` a multiple of the batch size) through every
/// configured decoder and score it against the batch targets. `groups`
/// controls the σ-VAE variance blocks.
pub fn reconstruct(
    model: &MultimodalVae,
    batch: &Batch,
    z: &Tensor,
    mode: ReconMode,
    groups: usize,
) -> Result<BTreeMap<Modality, Tensor>> {
    let cfg = model.config();
    let mut out = BTreeMap::new();
    for &m in model.modalities() {
        let term = match m {
            Modality::Image => {
                let mu = model.decode_image(z)?;
                real_recon(cfg.recon_image, mode, &mu, &batch.images, None, cfg.sigma_min_sq, groups)?
            }
            Modality::Text => {
                let logits = model.decode_text(z, batch.tokens.dim(1)?)?;
                text_recon(mode, &logits, &batch.text_onehot, &batch.text_loss_mask)?
            }
            Modality::Trajectory => {
                let mu = model.decode_trajectory(z, batch.traj.dim(1)?)?;
                real_recon(cfg.recon_trajectory, mode, &mu, &batch.traj, Some(&batch.traj_mask), cfg.sigma_min_sq, groups)?
            }
        };
        out.insert(m, term);
    }
    Ok(out)
}

/// Fusion used inside the ELBO for each scheduled subset.
#[derive(Clone, Debug, PartialEq)]
pub enum ElboFusion {
    Poe { include_prior: bool },
    /// Uniform mixture of subset products. `None` uses the powerset of the
    /// scheduled subset; an explicit list restricts the components.
    Mixture { components: Option<Vec<Vec<Modality>>>, include_empty: bool },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KlEstimate {
    Analytic,
    /// `log q(z) - log p(z)` at the drawn sample.
    SingleSample,
}

fn encode_all(model: &MultimodalVae, batch: &Batch) -> Result<BTreeMap<Modality, GaussianBatch>> {
    model.modalities().iter().map(|&m| Ok((m, model.encode(m, batch)?))).collect()
}

fn range(model: &MultimodalVae) -> (f64, f64) {
    (model.config().log_var_min, model.config().log_var_max)
}

fn subset_product(
    model: &MultimodalVae,
    experts: &BTreeMap<Modality, GaussianBatch>,
    subset: &[Modality],
    include_prior: bool,
) -> Result<GaussianBatch> {
    let chosen = subset
        .iter()
        .map(|m| experts.get(m).ok_or_else(|| Error::Config(format!("no expert for {}", m.name()))))
        .collect::<Result<Vec<_>>>()?;
    match chosen.first() {
        None => GaussianBatch::standard_like(&experts.values().next().expect("at least one expert").mean),
        Some(_) => GaussianBatch::product(&chosen, include_prior, range(model)),
    }
}

/// Mixture components for a subset, paired with the per-datum component choice.
fn mixture_sample(comps: &[GaussianBatch], eps: &Tensor) -> Result<(Tensor, Tensor)> {
    let c = comps.len();
    let (b, dz) = comps[0].mean.dims2()?;
    let stack = |f: fn(&GaussianBatch) -> &Tensor| -> Result<Tensor> {
        let parts: Vec<&Tensor> = comps.iter().map(f).collect();
        Ok(Tensor::stack(&parts, 0)?.reshape((c * b, dz))?)
    };
    let idx: Vec<u32> = (0..b).map(|i| ((i % c) * b + i) as u32).collect();
    let idx = Tensor::from_vec(idx, b, eps.device())?;
    let sel = GaussianBatch::new(stack(|g| &g.mean)?.index_select(&idx, 0)?, stack(|g| &g.log_var)?.index_select(&idx, 0)?);
    let z = sel.sample(eps)?;
    let kl = {
        let kls = comps.iter().map(|g| g.kl_to_standard()).collect::<Result<Vec<_>>>()?;
        (Tensor::stack(&kls, 0)?.sum(0)? / c as f64)?
    };
    Ok((z, kl))
}

fn mixture_log_density(comps: &[GaussianBatch], z: &Tensor) -> Result<Tensor> {
    let lps = comps.iter().map(|g| g.log_prob(z)).collect::<Result<Vec<_>>>()?;
    Ok((logsumexp0(&Tensor::stack(&lps, 0)?)? - (comps.len() as f64).ln())?)
}

/// Multimodal ELBO averaged over the scheduled subsets. Each subset's joint
/// posterior is sampled once per datum and ALL modalities are decoded.
pub fn multimodal_elbo(
    model: &MultimodalVae,
    batch: &Batch,
    fusion: &ElboFusion,
    schedule: &[Vec<Modality>],
    beta: f64,
    kl_estimate: KlEstimate,
    rng: &mut impl Rng,
) -> Result<Objective> {
    if schedule.is_empty() {
        return Err(Error::Config("the subset schedule is empty".into()));
    }
    let experts = encode_all(model, batch)?;
    let dz = model.config().latent_dim;
    let mut zs = Vec::with_capacity(schedule.len());
    let mut kls = Vec::with_capacity(schedule.len());
    for subset in schedule {
        let eps = standard_normal(rng, &[batch.size, dz], model.dtype())?;
        let (z, kl) = match fusion {
            ElboFusion::Poe { include_prior } => {
                if subset.is_empty() {
                    return Err(Error::Config("product-of-experts subsets must be non-empty".into()));
                }
                let q = subset_product(model, &experts, subset, *include_prior)?;
                let z = q.sample(&eps)?;
                let kl = match kl_estimate {
                    KlEstimate::Analytic => q.kl_to_standard()?,
                    KlEstimate::SingleSample => (q.log_prob(&z)? - GaussianBatch::standard_like(&z)?.log_prob(&z)?)?,
                };
                (z, kl)
            }
            ElboFusion::Mixture { components, include_empty } => {
                let subsets: Vec<Vec<Modality>> = match components {
                    Some(list) => list.clone(),
                    None => powerset(subset.len(), *include_empty)
                        .into_iter()
                        .map(|s| s.into_iter().map(|i| subset[i]).collect())
                        .collect(),
                };
                if subsets.is_empty() {
                    return Err(Error::Config("mixture has no components".into()));
                }
                let comps = subsets
                    .iter()
                    .map(|s| subset_product(model, &experts, s, false))
                    .collect::<Result<Vec<_>>>()?;
                let (z, kl) = mixture_sample(&comps, &eps)?;
                let kl = match kl_estimate {
                    KlEstimate::Analytic => kl,
                    KlEstimate::SingleSample => {
                        (mixture_log_density(&comps, &z)? - GaussianBatch::standard_like(&z)?.log_prob(&z)?)?
                    }
                };
                (z, kl)
            }
        };
        zs.push(z);
        kls.push(kl);
    }
    // all subsets are decoded in one pass; rows are subset-major
    let s = schedule.len();
    let z = Tensor::cat(&zs, 0)?;
    let kl = Tensor::cat(&kls, 0)?;
    let recon = reconstruct(model, batch, &z, ReconMode::Loss, s)?;
    let mut per_row = (&kl * beta)?;
    for r in recon.values() {
        per_row = (per_row + r)?;
    }
    let loss = per_row.mean_all()?;
    let recon: BTreeMap<Modality, f64> =
        recon.iter().map(|(m, r)| Ok((*m, scalar(&r.mean_all()?)?))).collect::<Result<_>>()?;
    let kl = scalar(&kl.mean_all()?)?;
    let total = recon.values().sum::<f64>() + beta * kl;
    Ok(Objective {
        breakdown: LossBreakdown { total, recon, kl, objective_kind: ObjectiveKind::Elbo },
        surrogate: Surrogate::Joint(loss),
    })
}

/// Noise and component choices for one IWAE evaluation.
pub struct IwaeDraw {
    /// `[K, B, Dz]`.
    pub eps: Tensor,
    /// Expert index per importance sample.
    pub choices: Vec<usize>,
}

impl IwaeDraw {
    pub fn sample(rng: &mut impl Rng, k: usize, batch: usize, dz: usize, experts: usize, dtype: DType) -> Result<Self> {
        Ok(Self { eps: standard_normal(rng, &[k, batch, dz], dtype)?, choices: mmvae_core::fusion::stratified_choices(k, experts) })
    }
}

/// Per-sample importance log-weights `[K, B]` and the per-modality
/// log-likelihoods that compose them.
pub struct IwaeTerms {
    pub log_weights: Tensor,
    pub log_likelihoods: BTreeMap<Modality, Tensor>,
    pub log_prior: Tensor,
    pub log_q: Tensor,
}

/// Log-weights for the mixture-of-experts posterior. Posterior parameters
/// inside `log q` are detached, so gradients reach the encoders only
/// through the reparameterized samples.
pub fn iwae_terms(model: &MultimodalVae, batch: &Batch, beta: f64, draw: &IwaeDraw) -> Result<IwaeTerms> {
    let experts: Vec<GaussianBatch> = encode_all(model, batch)?.into_values().collect();
    let (k, b, dz) = draw.eps.dims3()?;
    if k == 0 {
        return Err(Error::Config("at least one importance sample is required".into()));
    }
    let zs = (0..k)
        .map(|i| experts[draw.choices[i] % experts.len()].sample(&draw.eps.get(i)?))
        .collect::<Result<Vec<_>>>()?;
    let z = Tensor::stack(&zs, 0)?;
    let detached: Vec<GaussianBatch> = experts.iter().map(|e| e.detach()).collect();
    let log_q = mixture_log_density(&detached, &z)?;
    let log_prior = GaussianBatch::standard_like(&detached[0].mean)?.log_prob(&z)?;
    let flat = z.reshape((k * b, dz))?;
    let lls: BTreeMap<Modality, Tensor> = reconstruct(model, batch, &flat, ReconMode::LogLikelihood, 1)?
        .into_iter()
        .map(|(m, t)| Ok((m, t.reshape((k, b))?)))
        .collect::<Result<_>>()?;
    let mut lw = ((&log_prior - &log_q)? * beta)?;
    for t in lls.values() {
        lw = (lw + t)?;
    }
    Ok(IwaeTerms { log_weights: lw, log_likelihoods: lls, log_prior, log_q })
}

/// Importance-weighted bound over a uniform mixture of unimodal experts.
///
/// The reported value is `-(logsumexp_k log w_k - log K)` averaged over data.
/// Decoder gradients come from `sum_k w̃_k ∇ log w_k` and encoder gradients
/// from `sum_k w̃_k² ∇ log w_k`, with `w̃` the detached normalized weights.
pub fn iwae_dreg(model: &MultimodalVae, batch: &Batch, k: usize, beta: f64, rng: &mut impl Rng) -> Result<Objective> {
    if k == 0 {
        return Err(Error::Config("at least one importance sample is required".into()));
    }
    let draw = IwaeDraw::sample(rng, k, batch.size, model.config().latent_dim, model.modalities().len(), model.dtype())?;
    iwae_with_draw(model, batch, beta, &draw)
}

pub fn iwae_with_draw(model: &MultimodalVae, batch: &Batch, beta: f64, draw: &IwaeDraw) -> Result<Objective> {
    let terms = iwae_terms(model, batch, beta, draw)?;
    let lw = &terms.log_weights;
    let k = lw.dim(0)? as f64;
    let bound = ((logsumexp0(lw)? - k.ln())?.neg()?).mean_all()?;
    let w = candle_nn::ops::softmax(&lw.detach(), 0)?;
    let decoder = (w.mul(lw)?.sum(0)?.neg()?).mean_all()?;
    let encoder = (w.sqr()?.mul(lw)?.sum(0)?.neg()?).mean_all()?;
    let recon = terms
        .log_likelihoods
        .iter()
        .map(|(m, t)| Ok((*m, -scalar(&t.mean_all()?)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let kl = scalar(&(&terms.log_q - &terms.log_prior)?.mean_all()?)?;
    Ok(Objective {
        breakdown: LossBreakdown { total: scalar(&bound)?, recon, kl, objective_kind: ObjectiveKind::IwaeDreg },
        surrogate: Surrogate::Split { decoder, encoder },
    })
}

/// The objective each model kind trains with, using its config defaults.
pub fn training_objective(model: &MultimodalVae, batch: &Batch, rng: &mut impl Rng) -> Result<Objective> {
    let cfg = model.config();
    let mods = model.modalities().to_vec();
    match cfg.model_kind {
        ModelKind::Mvae => {
            let schedule: Vec<Vec<Modality>> = subset_schedule(mods.len(), cfg.subset_strategy, rng)
                .into_iter()
                .map(|s| s.into_iter().map(|i| mods[i]).collect())
                .collect();
            let fusion = ElboFusion::Poe { include_prior: cfg.include_prior };
            multimodal_elbo(model, batch, &fusion, &schedule, cfg.beta, KlEstimate::Analytic, rng)
        }
        ModelKind::Mopoe => {
            let fusion = ElboFusion::Mixture { components: None, include_empty: cfg.include_empty_subset };
            multimodal_elbo(model, batch, &fusion, &[mods], cfg.beta, KlEstimate::Analytic, rng)
        }
        ModelKind::Mmvae => iwae_dreg(model, batch, cfg.iwae_samples, cfg.beta, rng),
    }
}
