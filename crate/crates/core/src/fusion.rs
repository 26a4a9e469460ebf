//! Joint-posterior construction from per-modality experts: product of
//! experts, uniform mixture of experts, and the mixture over all subset
//! products.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{DiagonalGaussian, LogVarRange};
use crate::error::{Error, Result};

/// Unimodal posteriors of the modalities that were supplied.
#[derive(Clone, Debug)]
pub struct ExpertSet {
    experts: Vec<DiagonalGaussian>,
    present: Vec<bool>,
}

impl ExpertSet {
    /// `present` has one flag per modality; the experts are listed in the
    /// order of the `true` flags.
    pub fn new(experts: Vec<DiagonalGaussian>, present: Vec<bool>) -> Result<Self> {
        if experts.is_empty() {
            return Err(Error::Config("an expert set needs at least one expert".into()));
        }
        let n_present = present.iter().filter(|p| **p).count();
        if n_present != experts.len() {
            return Err(Error::Shape(format!(
                "{} experts supplied but the mask marks {n_present} present",
                experts.len()
            )));
        }
        let dim = experts[0].dim();
        if let Some(bad) = experts.iter().find(|e| e.dim() != dim) {
            return Err(Error::Shape(format!("expert has dimension {} but the first has {dim}", bad.dim())));
        }
        Ok(Self { experts, present })
    }

    /// All supplied experts present.
    pub fn full(experts: Vec<DiagonalGaussian>) -> Result<Self> {
        let present = vec![true; experts.len()];
        Self::new(experts, present)
    }

    pub fn experts(&self) -> &[DiagonalGaussian] {
        &self.experts
    }

    pub fn present_mask(&self) -> &[bool] {
        &self.present
    }

    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.experts[0].dim()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    Poe,
    Moe,
    Mopoe,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub dist: DiagonalGaussian,
    /// Indices into the expert set that were multiplied into this
    /// component. Empty for the prior.
    pub subset: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointPosterior {
    pub kind: FusionKind,
    pub components: Vec<Component>,
}

impl JointPosterior {
    fn uniform(kind: FusionKind, parts: Vec<(Vec<usize>, DiagonalGaussian)>) -> Self {
        let w = 1.0 / parts.len() as f64;
        let components = parts
            .into_iter()
            .map(|(subset, dist)| Component { weight: w, dist, subset })
            .collect();
        Self { kind, components }
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dist.dim()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    /// First moment of the mixture.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for c in &self.components {
            for (o, m) in out.iter_mut().zip(c.dist.mean()) {
                *o += c.weight * m;
            }
        }
        out
    }

    /// `log Σ_c w_c q_c(z)`.
    pub fn log_density(&self, z: &[f64]) -> Result<f64> {
        let terms = self
            .components
            .iter()
            .map(|c| Ok(c.weight.ln() + c.dist.log_prob(z)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(crate::recon::logsumexp(&terms))
    }

    /// Weighted average of component KLs to the prior, an upper bound on
    /// the mixture KL.
    pub fn kl_upper_bound(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.dist.kl_to_standard_normal()).sum()
    }
}

/// Precision-weighted product of Gaussians, optionally including the
/// standard-normal prior as an extra unit-precision expert.
pub fn product_of(experts: &[&DiagonalGaussian], include_prior: bool, range: LogVarRange) -> Result<DiagonalGaussian> {
    let dim = match (experts.first(), include_prior) {
        (Some(e), _) => e.dim(),
        (None, true) => return Err(Error::Config("prior-only product needs an explicit dimension".into())),
        (None, false) => return Err(Error::Config("product of zero experts".into())),
    };
    if let ([only], false) = (experts, include_prior) {
        return DiagonalGaussian::with_range(only.mean().to_vec(), only.log_var().to_vec(), range);
    }
    let mut precision = vec![if include_prior { 1.0 } else { 0.0 }; dim];
    let mut weighted = vec![0.0; dim];
    for e in experts {
        if e.dim() != dim {
            return Err(Error::Shape(format!("expert dimension {} differs from {dim}", e.dim())));
        }
        for d in 0..dim {
            let t = (-e.log_var()[d]).exp();
            precision[d] += t;
            weighted[d] += e.mean()[d] * t;
        }
    }
    let mean = weighted.iter().zip(&precision).map(|(w, t)| w / t).collect();
    let log_var = precision.iter().map(|t| -t.ln()).collect();
    DiagonalGaussian::with_range(mean, log_var, range)
}

pub fn product_of_experts(e: &ExpertSet, include_prior: bool) -> Result<DiagonalGaussian> {
    let refs: Vec<_> = e.experts.iter().collect();
    product_of(&refs, include_prior, LogVarRange::default())
}

/// Uniform mixture of the unimodal posteriors, one component per expert.
pub fn mixture_components(e: &ExpertSet) -> JointPosterior {
    let parts = e.experts.iter().cloned().enumerate().map(|(i, d)| (vec![i], d)).collect();
    JointPosterior::uniform(FusionKind::Moe, parts)
}

/// Subsets of `0..m` in binary-counting order; bit `i` of the counter
/// selects expert `i`.
pub fn powerset(m: usize, include_empty: bool) -> Vec<Vec<usize>> {
    let start = if include_empty { 0 } else { 1 };
    (start..1usize << m)
        .map(|mask| (0..m).filter(|i| mask & (1 << i) != 0).collect())
        .collect()
}

/// Uniform mixture over the given subsets, each fused by a product of
/// experts without the prior. The empty subset maps to the prior.
pub fn subset_mixture(e: &ExpertSet, subsets: &[Vec<usize>], kind: FusionKind) -> Result<JointPosterior> {
    if subsets.is_empty() {
        return Err(Error::Config("subset mixture needs at least one subset".into()));
    }
    let parts = subsets
        .iter()
        .map(|s| {
            if let Some(&bad) = s.iter().find(|&&i| i >= e.len()) {
                return Err(Error::Index { index: bad, len: e.len() });
            }
            let dist = if s.is_empty() {
                DiagonalGaussian::standard(e.dim())
            } else {
                let refs: Vec<_> = s.iter().map(|&i| &e.experts[i]).collect();
                product_of(&refs, false, LogVarRange::default())?
            };
            Ok((s.clone(), dist))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(JointPosterior::uniform(kind, parts))
}

pub fn mopoe_components(e: &ExpertSet, include_empty_subset: bool) -> JointPosterior {
    subset_mixture(e, &powerset(e.len(), include_empty_subset), FusionKind::Mopoe)
        .expect("powerset indices are in range")
}

/// Single-component posterior wrapping a product of experts.
pub fn poe_posterior(e: &ExpertSet, include_prior: bool) -> Result<JointPosterior> {
    let dist = product_of_experts(e, include_prior)?;
    Ok(JointPosterior {
        kind: FusionKind::Poe,
        components: vec![Component { weight: 1.0, dist, subset: (0..e.len()).collect() }],
    })
}

/// Component choices that cycle through the components: `i mod n`.
pub fn stratified_choices(k: usize, n_components: usize) -> Vec<usize> {
    (0..k).map(|i| i % n_components).collect()
}

/// One reparameterized draw per row of `noise`, from the component named
/// by the matching entry of `choices`.
pub fn sample_mixture(jp: &JointPosterior, noise: &[Vec<f64>], choices: &[usize]) -> Result<Vec<(Vec<f64>, usize)>> {
    if noise.len() != choices.len() {
        return Err(Error::Shape(format!("{} noise rows for {} choices", noise.len(), choices.len())));
    }
    noise
        .iter()
        .zip(choices)
        .map(|(eps, &c)| {
            let comp = jp.components.get(c).ok_or(Error::Index { index: c, len: jp.len() })?;
            Ok((comp.dist.reparam_sample(eps)?, c))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetStrategy {
    FullOnly,
    MvaeStandard,
}

/// Modality subsets trained on in one step. `MvaeStandard` adds every
/// singleton and, with three or more modalities, one random proper subset
/// of size at least two.
pub fn subset_schedule<R: Rng + ?Sized>(n_present: usize, strategy: SubsetStrategy, rng: &mut R) -> Vec<Vec<usize>> {
    let full: Vec<usize> = (0..n_present).collect();
    let mut out = vec![full];
    if strategy == SubsetStrategy::FullOnly {
        return out;
    }
    for i in 0..n_present {
        let s = vec![i];
        if !out.contains(&s) {
            out.push(s);
        }
    }
    if n_present >= 3 {
        let size = rng.random_range(2..n_present);
        let mut idx: Vec<usize> = (0..n_present).collect();
        idx.shuffle(rng);
        let mut s = idx[..size].to_vec();
        s.sort_unstable();
        out.push(s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn g(m: f64, var: f64) -> DiagonalGaussian {
        DiagonalGaussian::new(vec![m], vec![var.ln()]).unwrap()
    }

    /// Renormalized pointwise product on a grid; returns (mean, variance).
    fn grid_product_moments(experts: &[DiagonalGaussian]) -> (f64, f64) {
        let n = 100_000;
        let h = 16.0 / (n - 1) as f64;
        let (mut z0, mut z1, mut z2) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let z = -8.0 + i as f64 * h;
            let p: f64 = experts.iter().map(|e| e.log_prob(&[z]).unwrap()).sum::<f64>().exp();
            z0 += p;
            z1 += p * z;
            z2 += p * z * z;
        }
        let mean = z1 / z0;
        (mean, z2 / z0 - mean * mean)
    }

    #[test]
    fn poe_examples() {
        let p = product_of_experts(&ExpertSet::full(vec![g(0.0, 1.0), g(0.0, 1.0)]).unwrap(), false).unwrap();
        assert_abs_diff_eq!(p.mean()[0], 0.0);
        assert_abs_diff_eq!(p.variance()[0], 0.5, epsilon = 1e-12);
        let p = product_of_experts(&ExpertSet::full(vec![g(1.0, 1.0), g(3.0, 1.0)]).unwrap(), false).unwrap();
        assert_abs_diff_eq!(p.mean()[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.variance()[0], 0.5, epsilon = 1e-12);

        let experts = vec![g(0.0, 1.0), g(2.0, 0.5)];
        let (gm, gv) = grid_product_moments(&experts);
        assert_abs_diff_eq!(gm, 4.0 / 3.0, epsilon = 1e-6);
        assert_abs_diff_eq!(gv, 1.0 / 3.0, epsilon = 1e-6);
        let p = product_of_experts(&ExpertSet::full(experts).unwrap(), false).unwrap();
        assert_abs_diff_eq!(p.mean()[0], gm, epsilon = 1e-6);
        assert_abs_diff_eq!(p.variance()[0], gv, epsilon = 1e-6);
    }

    #[test]
    fn poe_with_prior_adds_unit_precision() {
        let p = product_of_experts(&ExpertSet::full(vec![g(2.0, 1.0)]).unwrap(), true).unwrap();
        assert_abs_diff_eq!(p.mean()[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.variance()[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn poe_reclamps_confident_fusion() {
        let sharp = DiagonalGaussian::new(vec![0.0], vec![-10.0]).unwrap();
        let p = product_of_experts(&ExpertSet::full(vec![sharp.clone(), sharp]).unwrap(), false).unwrap();
        assert_eq!(p.log_var()[0], -10.0);
    }

    #[test]
    fn expert_set_validation() {
        let a = g(0.0, 1.0);
        let b = DiagonalGaussian::new(vec![0.0, 0.0], vec![0.0, 0.0]).unwrap();
        assert!(matches!(ExpertSet::full(vec![a.clone(), b]), Err(Error::Shape(_))));
        assert!(ExpertSet::full(vec![]).is_err());
        assert!(ExpertSet::new(vec![a.clone()], vec![true, true, false]).is_err());
        let e = ExpertSet::new(vec![a], vec![false, true, false]).unwrap();
        assert_eq!(e.present_mask(), &[false, true, false]);
    }

    #[test]
    fn moe_examples() {
        let e = ExpertSet::full(vec![g(0.0, 1.0), g(1.0, 1.0), g(2.0, 1.0)]).unwrap();
        assert_eq!(mixture_components(&e).weights(), vec![1.0 / 3.0; 3]);
        let lone = ExpertSet::full(vec![g(0.5, 2.0)]).unwrap();
        let jp = mixture_components(&lone);
        assert_eq!(jp.len(), 1);
        assert_eq!(jp.components[0].weight, 1.0);
        assert_eq!(jp.components[0].dist, g(0.5, 2.0));
    }

    #[test]
    fn moe_mean_matches_stratified_monte_carlo() {
        use rand_distr::{Distribution, StandardNormal};
        let jp = mixture_components(&ExpertSet::full(vec![g(0.0, 1.0), g(5.0, 1.0)]).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = 100_000;
        let noise: Vec<Vec<f64>> = (0..k).map(|_| vec![StandardNormal.sample(&mut rng)]).collect();
        let samples = sample_mixture(&jp, &noise, &stratified_choices(k, 2)).unwrap();
        let mc = samples.iter().map(|(z, _)| z[0]).sum::<f64>() / k as f64;
        assert!((mc - 2.5).abs() / 2.5 < 0.02, "mc mean {mc}");
        assert_abs_diff_eq!(jp.mean()[0], 2.5, epsilon = 1e-12);
    }

    #[test]
    fn mopoe_examples() {
        let e2 = ExpertSet::full(vec![g(1.0, 1.0), g(3.0, 0.5)]).unwrap();
        let jp = mopoe_components(&e2, true);
        assert_eq!(jp.len(), 4);
        assert_eq!(jp.weights(), vec![0.25; 4]);
        let subsets: Vec<_> = jp.components.iter().map(|c| c.subset.clone()).collect();
        assert_eq!(subsets, vec![vec![], vec![0], vec![1], vec![0, 1]]);
        assert_eq!(jp.components[0].dist, DiagonalGaussian::standard(1));
        assert_eq!(jp.components[1].dist, g(1.0, 1.0));
        let full = product_of_experts(&e2, false).unwrap();
        assert_eq!(jp.components[3].dist, full);

        let e3 = ExpertSet::full(vec![g(0.0, 1.0), g(1.0, 1.0), g(2.0, 1.0)]).unwrap();
        assert_eq!(mopoe_components(&e3, true).len(), 8);
        assert_eq!(mopoe_components(&e3, false).len(), 7);

        let e1 = ExpertSet::full(vec![g(0.3, 0.7)]).unwrap();
        let jp = mopoe_components(&e1, false);
        assert_eq!(jp.len(), 1);
        assert_eq!(jp.components[0].dist, g(0.3, 0.7));
        assert_eq!(jp.components, mixture_components(&e1).components);
    }

    #[test]
    fn mopoe_singletons_reduce_to_moe() {
        let e = ExpertSet::full(vec![g(0.0, 1.0), g(1.0, 2.0), g(-2.0, 0.5)]).unwrap();
        let jp = mopoe_components(&e, true);
        let singles: Vec<_> = jp.components.iter().filter(|c| c.subset.len() == 1).map(|c| c.dist.clone()).collect();
        let moe: Vec<_> = mixture_components(&e).components.into_iter().map(|c| c.dist).collect();
        assert_eq!(singles, moe);
    }

    #[test]
    fn mixture_log_density_and_kl_bound() {
        let jp = mixture_components(&ExpertSet::full(vec![g(-1.0, 1.0), g(1.0, 1.0)]).unwrap());
        let expected = (0.5 * g(-1.0, 1.0).log_prob(&[0.2]).unwrap().exp() + 0.5 * g(1.0, 1.0).log_prob(&[0.2]).unwrap().exp()).ln();
        assert_abs_diff_eq!(jp.log_density(&[0.2]).unwrap(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(jp.kl_upper_bound(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn sampling_examples() {
        let e = ExpertSet::full(vec![g(0.0, 1.0), g(4.0, 1.0)]).unwrap();
        let poe = poe_posterior(&e, false).unwrap();
        let zs = sample_mixture(&poe, &[vec![0.0], vec![0.0]], &[0, 0]).unwrap();
        assert!(zs.iter().all(|(z, c)| *c == 0 && z[0] == poe.components[0].dist.mean()[0]));
        assert_eq!(stratified_choices(4, 2), vec![0, 1, 0, 1]);
        assert!(sample_mixture(&poe, &[], &[]).unwrap().is_empty());
        let moe = mixture_components(&e);
        assert!(matches!(sample_mixture(&moe, &[vec![0.0]], &[2]), Err(Error::Index { index: 2, len: 2 })));
    }

    #[test]
    fn schedule_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(subset_schedule(3, SubsetStrategy::FullOnly, &mut rng), vec![vec![0, 1, 2]]);
        let s = subset_schedule(3, SubsetStrategy::MvaeStandard, &mut rng);
        for want in [vec![0, 1, 2], vec![0], vec![1], vec![2]] {
            assert!(s.contains(&want));
        }
        assert_eq!(s.len(), 5);
        assert_eq!(s[4].len(), 2);
        assert_eq!(subset_schedule(1, SubsetStrategy::MvaeStandard, &mut rng), vec![vec![0]]);
        let s2 = subset_schedule(2, SubsetStrategy::MvaeStandard, &mut rng);
        assert_eq!(s2, vec![vec![0, 1], vec![0], vec![1]]);
    }
}
