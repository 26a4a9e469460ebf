//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Three operations are exposed: one-dimensional Gaussian fusion curves,
//! a rendered scene with its scripted trajectory, and the σ-VAE loss as a
//! function of the decoder variance.

use mmvae_core::fusion::{mixture_components, product_of_experts};
use mmvae_core::recon::{gaussian_nll, sigma_vae_recon};
use mmvae_core::scene::{
    check_success, make_instruction, render_topview, sample_scene, synthesize_trajectory, DatasetConfig, IMAGE_SIZE,
    WORKSPACE_HALF,
};
use mmvae_core::seed::rng_for;
use mmvae_core::{DiagonalGaussian, ExpertSet};
use wasm_bindgen::prelude::*;

fn js_err(e: mmvae_core::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Densities of two 1-D experts, their product and their uniform mixture
/// sampled on a common grid.
#[wasm_bindgen]
pub struct FusionCurves {
    grid: Vec<f64>,
    expert_a: Vec<f64>,
    expert_b: Vec<f64>,
    product: Vec<f64>,
    mixture: Vec<f64>,
    product_mean: f64,
    product_var: f64,
}

#[wasm_bindgen]
impl FusionCurves {
    #[wasm_bindgen(getter)]
    pub fn grid(&self) -> Vec<f64> {
        self.grid.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn expert_a(&self) -> Vec<f64> {
        self.expert_a.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn expert_b(&self) -> Vec<f64> {
        self.expert_b.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn product(&self) -> Vec<f64> {
        self.product.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn mixture(&self) -> Vec<f64> {
        self.mixture.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn product_mean(&self) -> f64 {
        self.product_mean
    }
    #[wasm_bindgen(getter)]
    pub fn product_var(&self) -> f64 {
        self.product_var
    }
}

pub fn compute_fusion(mean_a: f64, log_var_a: f64, mean_b: f64, log_var_b: f64, points: usize) -> mmvae_core::Result<FusionCurves> {
    let a = DiagonalGaussian::new(vec![mean_a], vec![log_var_a])?;
    let b = DiagonalGaussian::new(vec![mean_b], vec![log_var_b])?;
    let experts = ExpertSet::full(vec![a.clone(), b.clone()])?;
    let poe = product_of_experts(&experts, false)?;
    let moe = mixture_components(&experts);
    let points = points.max(2);
    let grid: Vec<f64> = (0..points).map(|i| -8.0 + 16.0 * i as f64 / (points - 1) as f64).collect();
    let density = |g: &DiagonalGaussian| grid.iter().map(|&z| g.log_prob(&[z]).map(f64::exp)).collect::<mmvae_core::Result<Vec<_>>>();
    let mixture = grid.iter().map(|&z| moe.log_density(&[z]).map(f64::exp)).collect::<mmvae_core::Result<Vec<_>>>()?;
    Ok(FusionCurves {
        expert_a: density(&a)?,
        expert_b: density(&b)?,
        product: density(&poe)?,
        mixture,
        product_mean: poe.mean()[0],
        product_var: poe.variance()[0],
        grid,
    })
}

#[wasm_bindgen]
pub fn fusion_curves(mean_a: f64, log_var_a: f64, mean_b: f64, log_var_b: f64, points: usize) -> Result<FusionCurves, JsValue> {
    compute_fusion(mean_a, log_var_a, mean_b, log_var_b, points).map_err(js_err)
}

/// A sampled test scene: RGBA pixels, the instruction, and the scripted
/// end-effector path in pixel coordinates.
#[wasm_bindgen]
pub struct SceneDemo {
    rgba: Vec<u8>,
    path_rows: Vec<f64>,
    path_cols: Vec<f64>,
    heights: Vec<f64>,
    gripper: Vec<f64>,
    instruction: String,
    success: bool,
    final_distance: f64,
}

#[wasm_bindgen]
impl SceneDemo {
    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        IMAGE_SIZE
    }
    #[wasm_bindgen(getter)]
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn path_rows(&self) -> Vec<f64> {
        self.path_rows.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn path_cols(&self) -> Vec<f64> {
        self.path_cols.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn heights(&self) -> Vec<f64> {
        self.heights.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn gripper(&self) -> Vec<f64> {
        self.gripper.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn instruction(&self) -> String {
        self.instruction.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn success(&self) -> bool {
        self.success
    }
    #[wasm_bindgen(getter)]
    pub fn final_distance(&self) -> f64 {
        self.final_distance
    }
}

/// World `(x, y)` to fractional pixel `(row, col)`, matching the renderer.
fn to_pixel(x: f64, y: f64) -> (f64, f64) {
    let pitch = 2.0 * WORKSPACE_HALF / IMAGE_SIZE as f64;
    ((x + WORKSPACE_HALF) / pitch - 0.5, (y + WORKSPACE_HALF) / pitch - 0.5)
}

pub fn compute_scene(cell: &str, seed: u64, trial: u64) -> mmvae_core::Result<SceneDemo> {
    let cfg = DatasetConfig::preset(cell)?;
    let scene = sample_scene(&cfg, &mut rng_for(seed, "eval", trial))?;
    let traj = synthesize_trajectory(&scene, &mut rng_for(seed, "oracle", trial))?;
    let outcome = check_success(&scene, &traj)?;
    let image = render_topview(&scene);
    let mut rgba = Vec::with_capacity(IMAGE_SIZE * IMAGE_SIZE * 4);
    for px in image.to_bytes().chunks(3) {
        rgba.extend_from_slice(px);
        rgba.push(255);
    }
    let (mut path_rows, mut path_cols) = (Vec::new(), Vec::new());
    for s in traj.steps() {
        let (r, c) = to_pixel(s[0], s[1]);
        path_rows.push(r);
        path_cols.push(c);
    }
    Ok(SceneDemo {
        rgba,
        path_rows,
        path_cols,
        heights: traj.steps().iter().map(|s| s[2]).collect(),
        gripper: traj.steps().iter().map(|s| s[3]).collect(),
        instruction: make_instruction(&scene).text(),
        success: outcome.success,
        final_distance: outcome.final_distance_m,
    })
}

#[wasm_bindgen]
pub fn scene_demo(cell: &str, seed: u64, trial: u64) -> Result<SceneDemo, JsValue> {
    compute_scene(cell, seed, trial).map_err(js_err)
}

#[wasm_bindgen]
pub fn preset_names() -> Vec<String> {
    mmvae_core::scene::PRESET_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Gaussian negative log-likelihood of a residual vector over a log-spaced
/// range of variances, with the σ-VAE optimum marked.
#[wasm_bindgen]
pub struct SigmaCurve {
    variances: Vec<f64>,
    nll: Vec<f64>,
    optimum_variance: f64,
    optimum_loss: f64,
}

#[wasm_bindgen]
impl SigmaCurve {
    #[wasm_bindgen(getter)]
    pub fn variances(&self) -> Vec<f64> {
        self.variances.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn nll(&self) -> Vec<f64> {
        self.nll.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn optimum_variance(&self) -> f64 {
        self.optimum_variance
    }
    #[wasm_bindgen(getter)]
    pub fn optimum_loss(&self) -> f64 {
        self.optimum_loss
    }
}

pub fn compute_sigma_curve(residuals: &[f64], sigma_min_sq: f64, points: usize) -> mmvae_core::Result<SigmaCurve> {
    let zeros = vec![0.0; residuals.len()];
    let best = sigma_vae_recon(residuals, &zeros, sigma_min_sq)?;
    let points = points.max(2);
    let (lo, hi) = ((best.variance / 100.0).ln(), (best.variance * 100.0).ln());
    let variances: Vec<f64> = (0..points).map(|i| (lo + (hi - lo) * i as f64 / (points - 1) as f64).exp()).collect();
    let nll = variances.iter().map(|&v| gaussian_nll(residuals, &zeros, v)).collect::<mmvae_core::Result<Vec<_>>>()?;
    Ok(SigmaCurve { variances, nll, optimum_variance: best.variance, optimum_loss: best.loss })
}

#[wasm_bindgen]
pub fn sigma_curve(residuals: Vec<f64>, sigma_min_sq: f64, points: usize) -> Result<SigmaCurve, JsValue> {
    compute_sigma_curve(&residuals, sigma_min_sq, points).map_err(js_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_is_narrower_than_either_expert() {
        let c = compute_fusion(-1.0, 0.0, 2.0, 0.5, 401).unwrap();
        assert!(c.product_var < 1.0 && c.product_var < 0.5f64.exp());
        assert_eq!(c.grid.len(), 401);
        let step = c.grid[1] - c.grid[0];
        let mass: f64 = c.mixture.iter().sum::<f64>() * step;
        assert!((mass - 1.0).abs() < 1e-3);
    }

    #[test]
    fn scene_paths_stay_in_the_image() {
        let s = compute_scene("random-lift", 3, 0).unwrap();
        assert!(s.success);
        assert_eq!(s.rgba.len(), IMAGE_SIZE * IMAGE_SIZE * 4);
        assert!(s.path_rows.iter().chain(&s.path_cols).all(|p| (-1.0..IMAGE_SIZE as f64).contains(p)));
        assert!(s.instruction.starts_with("lift"));
        assert!(compute_scene("nowhere", 0, 0).is_err());
    }

    #[test]
    fn sigma_curve_bottoms_out_at_the_optimum() {
        let c = compute_sigma_curve(&[0.5, -1.0, 0.25, 2.0], 1e-6, 101).unwrap();
        let min = c.nll.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(c.optimum_loss <= min + 1e-12);
        assert!((c.optimum_variance - (0.25 + 1.0 + 0.0625 + 4.0) / 4.0).abs() < 1e-12);
    }
}
