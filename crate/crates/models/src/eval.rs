//! Cross-modal inference and the task-success evaluation protocol.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use candle_core::{DType, Tensor};
use mmvae_core::fusion::powerset;
use mmvae_core::scene::{
    check_success, make_instruction, median_script_length, render_topview, sample_scene, synthesize_trajectory,
    DatasetConfig, ImageTensor, SceneSpec, TokenSequence, Trajectory, PAD,
};
use mmvae_core::seed::rng_for;
use serde::{Deserialize, Serialize};

use crate::config::{InferenceFusion, ModelKind};
use crate::data::{image_tensor, text_tensors, trajectory_tensors};
use crate::error::{Error, Result};
use crate::gaussian::GaussianBatch;
use crate::model::MultimodalVae;

/// Latent means to decode for a set of present experts. The decoded outputs
/// of all returned latents are averaged.
fn inference_latents(model: &MultimodalVae, experts: &[GaussianBatch]) -> Result<Vec<Tensor>> {
    let cfg = model.config();
    let range = (cfg.log_var_min, cfg.log_var_max);
    let refs: Vec<&GaussianBatch> = experts.iter().collect();
    match (cfg.model_kind, cfg.inference_fusion) {
        (ModelKind::Mvae, _) => Ok(vec![GaussianBatch::product(&refs, cfg.include_prior, range)?.mean]),
        (_, InferenceFusion::ProductOfPresent) => Ok(vec![GaussianBatch::product(&refs, false, range)?.mean]),
        (ModelKind::Mmvae, InferenceFusion::ComponentAverage) => Ok(experts.iter().map(|e| e.mean.clone()).collect()),
        (ModelKind::Mopoe, InferenceFusion::ComponentAverage) => powerset(experts.len(), false)
            .into_iter()
            .map(|s| {
                let part: Vec<&GaussianBatch> = s.iter().map(|&i| &experts[i]).collect();
                Ok(GaussianBatch::product(&part, false, range)?.mean)
            })
            .collect(),
    }
}

fn average(outputs: Vec<Tensor>) -> Result<Tensor> {
    let n = outputs.len() as f64;
    Ok((Tensor::stack(&outputs, 0)?.sum(0)? / n)?)
}

/// Decoded trajectory rows for a batch of (image, instruction) pairs.
pub fn infer_trajectories(
    model: &MultimodalVae,
    images: &[&ImageTensor],
    instructions: &[&TokenSequence],
    length: usize,
) -> Result<Vec<Vec<[f64; 4]>>> {
    if images.len() != instructions.len() {
        return Err(Error::Shape("one instruction per image is required".into()));
    }
    let dtype = model.dtype();
    let img = model.encode_image(&image_tensor(images, dtype)?)?;
    let (ids, keep) = text_tensors(instructions, model.config().text_len, dtype)?;
    let txt = model.encode_text(&ids, &keep)?;
    let latents = inference_latents(model, &[img, txt])?;
    let decoded = latents.iter().map(|z| model.decode_trajectory(z, length)).collect::<Result<Vec<_>>>()?;
    let out: Vec<Vec<Vec<f64>>> = average(decoded)?.to_dtype(DType::F64)?.to_vec3()?;
    Ok(out.into_iter().map(|rows| rows.into_iter().map(|r| [r[0], r[1], r[2], r[3]]).collect()).collect())
}

/// Mean-decoded trajectory for one scene; deterministic.
pub fn infer_trajectory(
    model: &MultimodalVae,
    image: &ImageTensor,
    instruction: &TokenSequence,
    length: usize,
) -> Result<Trajectory> {
    let rows = infer_trajectories(model, &[image], &[instruction], length)?.remove(0);
    Ok(Trajectory::new(rows)?)
}

/// Greedy caption from an image and a trajectory. Everything after the
/// first PAD is emitted as PAD.
pub fn infer_caption(model: &MultimodalVae, image: &ImageTensor, trajectory: &Trajectory) -> Result<TokenSequence> {
    let dtype = model.dtype();
    let img = model.encode_image(&image_tensor(&[image], dtype)?)?;
    let (steps, mask) = trajectory_tensors(&[trajectory], dtype)?;
    let trj = model.encode_trajectory(&steps, &mask)?;
    let latents = inference_latents(model, &[img, trj])?;
    let len = model.config().text_len;
    let logits = latents.iter().map(|z| model.decode_text(z, len)).collect::<Result<Vec<_>>>()?;
    let ids: Vec<u32> = average(logits)?.squeeze(0)?.argmax(1)?.to_vec1()?;
    let mut tokens = Vec::with_capacity(len);
    let mut ended = false;
    for id in ids {
        ended |= id as usize == PAD;
        tokens.push(if ended { PAD } else { id as usize });
    }
    Ok(TokenSequence::new(tokens)?)
}

/// Anything that proposes a trajectory for a rendered scene.
pub trait Policy {
    fn plan(
        &self,
        trial: usize,
        scene: &SceneSpec,
        image: &ImageTensor,
        instruction: &TokenSequence,
        length: usize,
    ) -> Result<Trajectory>;
}

impl Policy for MultimodalVae {
    fn plan(&self, _: usize, _: &SceneSpec, image: &ImageTensor, instruction: &TokenSequence, length: usize) -> Result<Trajectory> {
        infer_trajectory(self, image, instruction, length)
    }
}

/// Replays the scripted demonstrator.
pub struct ScriptedOracle {
    pub seed: u64,
}

impl Policy for ScriptedOracle {
    fn plan(&self, trial: usize, scene: &SceneSpec, _: &ImageTensor, _: &TokenSequence, _: usize) -> Result<Trajectory> {
        Ok(synthesize_trajectory(scene, &mut rng_for(self.seed, "oracle", trial as u64))?)
    }
}

/// Emits an all-zero trajectory of the requested length.
pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn plan(&self, _: usize, _: &SceneSpec, _: &ImageTensor, _: &TokenSequence, length: usize) -> Result<Trajectory> {
        Ok(Trajectory::new(vec![[0.0; 4]; length])?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialDiagnostic {
    pub trial: usize,
    pub task: Option<String>,
    pub length: Option<usize>,
    pub success: bool,
    /// Closest approach to the target; absent when the trial errored.
    pub final_distance_m: Option<f64>,
    pub displacement_m: Option<[f64; 3]>,
    pub max_height_gain_m: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: String,
    pub seed: u64,
    pub n_trials: usize,
    pub accuracy: f64,
    pub trials: Vec<TrialDiagnostic>,
}

/// Runs `n_trials` fresh test scenes through `policy` and checks each with
/// the kinematic success rules. Per-trial errors count as failures.
pub fn evaluate_success<P: Policy + ?Sized>(
    policy: &P,
    config: &DatasetConfig,
    n_trials: usize,
    seed: u64,
) -> Result<EvalReport> {
    config.validate()?;
    let mut medians = BTreeMap::new();
    let mut trials = Vec::with_capacity(n_trials);
    for trial in 0..n_trials {
        let mut diag = TrialDiagnostic {
            trial,
            task: None,
            length: None,
            success: false,
            final_distance_m: None,
            displacement_m: None,
            max_height_gain_m: None,
            error: None,
        };
        let attempt = (|| -> Result<()> {
            let scene = sample_scene(config, &mut rng_for(seed, "eval", trial as u64))?;
            diag.task = Some(scene.task.name().to_string());
            let length = match medians.get(&scene.task) {
                Some(&l) => l,
                None => {
                    let l = median_script_length(config, scene.task)?;
                    medians.insert(scene.task, l);
                    l
                }
            };
            diag.length = Some(length);
            let image = render_topview(&scene);
            let instruction = make_instruction(&scene);
            let traj = policy.plan(trial, &scene, &image, &instruction, length)?;
            let outcome = check_success(&scene, &traj)?;
            diag.success = outcome.success;
            diag.final_distance_m = Some(outcome.final_distance_m);
            diag.displacement_m = Some(outcome.displacement_m);
            diag.max_height_gain_m = Some(outcome.max_height_gain_m);
            Ok(())
        })();
        if let Err(e) = attempt {
            diag.error = Some(e.to_string());
        }
        trials.push(diag);
    }
    let wins = trials.iter().filter(|t| t.success).count();
    let accuracy = if n_trials == 0 { 0.0 } else { wins as f64 / n_trials as f64 };
    Ok(EvalReport { config: config.name.clone(), seed, n_trials, accuracy, trials })
}

/// Fraction of trials whose closest approach is strictly below each
/// threshold. Errored trials never count.
pub fn curve_from_report(report: &EvalReport, thresholds: &[f64]) -> Result<Vec<(f64, f64)>> {
    if thresholds.is_empty() {
        return Err(Error::Config("no thresholds given".into()));
    }
    if thresholds.windows(2).any(|w| !(w[0] <= w[1])) || thresholds.iter().any(|t| t.is_nan()) {
        return Err(Error::Config("thresholds must be sorted ascending".into()));
    }
    let n = report.trials.len().max(1) as f64;
    Ok(thresholds
        .iter()
        .map(|&t| {
            let hits = report.trials.iter().filter(|d| d.final_distance_m.is_some_and(|x| x < t)).count();
            (t, hits as f64 / n)
        })
        .collect())
}

pub fn threshold_curve<P: Policy + ?Sized>(
    policy: &P,
    config: &DatasetConfig,
    thresholds: &[f64],
    n_trials: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let report = evaluate_success(policy, config, n_trials, seed)?;
    curve_from_report(&report, thresholds)
}

/// Summary of one evaluated run, as written by the `eval` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub model: String,
    pub recon: String,
    pub cell: String,
    pub accuracy: f64,
    pub n_trials: usize,
    pub seed: u64,
    pub inference_fusion: String,
    #[serde(default)]
    pub curve: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub model: String,
    pub cell: String,
    pub recon: String,
    pub accuracy: Option<f64>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImprovementRow {
    pub model: String,
    pub cell: String,
    pub sigma_minus_mse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridReport {
    pub rows: Vec<GridRow>,
    pub improvements: Vec<ImprovementRow>,
    /// Mean of the available σ-VAE minus MSE differences.
    pub mean_improvement: Option<f64>,
}

pub const GRID_FILE: &str = "grid.csv";
pub const PLOT_FILE: &str = "plot_data.csv";
pub const IMPROVEMENT_FILE: &str = "improvement.csv";

/// Lays runs out as one row per (model, recon, cell). Cells without a run
/// are kept as empty rows. Writes the grid, the threshold-curve plot data
/// and the σ-VAE minus MSE improvement table to `out_dir`.
pub fn grid_report(runs: &[RunSummary], cells: &[String], out_dir: &Path) -> Result<GridReport> {
    let mut models: Vec<(String, String)> = runs.iter().map(|r| (r.model.clone(), r.recon.clone())).collect();
    models.sort();
    models.dedup();
    let find = |model: &str, recon: &str, cell: &str| {
        runs.iter().filter(|r| r.model == model && r.recon == recon && r.cell == cell).last()
    };
    let mut rows = Vec::new();
    for (model, recon) in &models {
        for cell in cells {
            let run = find(model, recon, cell);
            rows.push(GridRow {
                model: model.clone(),
                cell: cell.clone(),
                recon: recon.clone(),
                accuracy: run.map(|r| r.accuracy),
                n: run.map(|r| r.n_trials),
                seed: run.map(|r| r.seed),
            });
        }
    }
    let mut names: Vec<String> = models.iter().map(|(m, _)| m.clone()).collect();
    names.dedup();
    let mut improvements = Vec::new();
    for model in &names {
        for cell in cells {
            let s = find(model, "sigma", cell).map(|r| r.accuracy);
            let m = find(model, "mse", cell).map(|r| r.accuracy);
            let diff = match (s, m) {
                (Some(s), Some(m)) => Some(s - m),
                _ => None,
            };
            improvements.push(ImprovementRow { model: model.clone(), cell: cell.clone(), sigma_minus_mse: diff });
        }
    }
    let diffs: Vec<f64> = improvements.iter().filter_map(|r| r.sigma_minus_mse).collect();
    let mean_improvement = (!diffs.is_empty()).then(|| diffs.iter().sum::<f64>() / diffs.len() as f64);

    fs::create_dir_all(out_dir)?;
    let mut w = csv::Writer::from_path(out_dir.join(GRID_FILE))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(out_dir.join(PLOT_FILE))?;
    w.write_record(["model", "cell", "recon", "threshold", "accuracy"])?;
    let mut ordered: Vec<&RunSummary> = runs.iter().collect();
    ordered.sort_by(|a, b| (&a.model, &a.recon, &a.cell).cmp(&(&b.model, &b.recon, &b.cell)));
    for r in ordered {
        for (t, a) in &r.curve {
            w.write_record([r.model.as_str(), r.cell.as_str(), r.recon.as_str(), &t.to_string(), &a.to_string()])?;
        }
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(out_dir.join(IMPROVEMENT_FILE))?;
    for r in &improvements {
        w.serialize(r)?;
    }
    w.serialize(ImprovementRow { model: "all".into(), cell: "mean".into(), sigma_minus_mse: mean_improvement })?;
    w.flush()?;
    Ok(GridReport { rows, improvements, mean_improvement })
}

pub fn read_grid(path: &Path) -> Result<Vec<GridRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<GridRow>, _>>()?)
}
