//! Seeded training loop with JSON-lines loss logging and checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::Tensor;
use mmvae_core::dataset::Dataset;
use mmvae_core::seed::derive_seed;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{Modality, ModelConfig, ObjectiveKind};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::model::MultimodalVae;
use crate::objectives::{training_objective, LossBreakdown, Surrogate};
use crate::optim::{Adam, AdamConfig};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LAST_GOOD_FILE: &str = "last_good.ckpt";
pub const LOSS_LOG_FILE: &str = "loss.jsonl";
pub const RUN_FILE: &str = "run.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { epochs: 200, batch_size: 32, learning_rate: 1e-3, seed: 0, checkpoint_every: 10 }
    }
}

/// One line of the loss log: epoch means of the loss breakdown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub recon_image: Option<f64>,
    pub recon_text: Option<f64>,
    pub recon_traj: Option<f64>,
    pub kl: f64,
    pub objective_kind: ObjectiveKind,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunMetadata {
    pub optimizer: String,
    pub optimizer_config: AdamConfig,
    pub options: TrainOptions,
    pub objective_kind: ObjectiveKind,
    pub model: ModelConfig,
    pub dataset: String,
    pub dataset_seed: u64,
    pub dataset_size: usize,
}

pub struct TrainOutcome {
    pub model: MultimodalVae,
    pub history: Vec<EpochRecord>,
    pub checkpoint: PathBuf,
}

/// Rejects datasets whose shapes or vocabulary the config cannot consume.
pub fn check_compatible(config: &ModelConfig, ds: &Dataset) -> Result<()> {
    let m = &ds.manifest;
    let mismatch = |what: String| Err(Error::Config(format!("dataset `{}` is incompatible: {what}", m.config.name)));
    if ds.is_empty() {
        return mismatch("it has no samples".into());
    }
    if ds.image_size() != config.image.size {
        return mismatch(format!("images are {0}x{0}, model expects {1}x{1}", ds.image_size(), config.image.size));
    }
    if ds.text_len() != config.text_len {
        return mismatch(format!("text length {} differs from model {}", ds.text_len(), config.text_len));
    }
    if ds.t_max() > config.t_max {
        return mismatch(format!("trajectories pad to {}, model supports {}", ds.t_max(), config.t_max));
    }
    if m.vocabulary != config.vocabulary {
        return mismatch("vocabulary differs".into());
    }
    Ok(())
}

/// Gradients by parameter name. For split surrogates the encoder
/// parameters take their gradient from the encoder surrogate.
pub fn gradients(model: &MultimodalVae, surrogate: &Surrogate) -> Result<BTreeMap<String, Tensor>> {
    let vars = model.store().vars();
    let mut out = BTreeMap::new();
    match surrogate {
        Surrogate::Joint(loss) => {
            let g = loss.backward()?;
            for (name, var) in vars {
                if let Some(t) = g.get(var.as_tensor()) {
                    out.insert(name.clone(), t.clone());
                }
            }
        }
        Surrogate::Split { decoder, encoder } => {
            let gd = decoder.backward()?;
            let ge = encoder.backward()?;
            for (name, var) in vars {
                let g = if MultimodalVae::is_encoder_param(name) { &ge } else { &gd };
                if let Some(t) = g.get(var.as_tensor()) {
                    out.insert(name.clone(), t.clone());
                }
            }
        }
    }
    Ok(out)
}

struct Accumulator {
    n: f64,
    total: f64,
    kl: f64,
    recon: BTreeMap<Modality, f64>,
}

impl Accumulator {
    fn new() -> Self {
        Self { n: 0.0, total: 0.0, kl: 0.0, recon: BTreeMap::new() }
    }

    fn add(&mut self, b: &LossBreakdown, weight: usize) {
        let w = weight as f64;
        self.n += w;
        self.total += w * b.total;
        self.kl += w * b.kl;
        for (m, v) in &b.recon {
            *self.recon.entry(*m).or_default() += w * v;
        }
    }

    fn record(&self, epoch: usize, kind: ObjectiveKind) -> EpochRecord {
        let get = |m| self.recon.get(&m).map(|v| v / self.n);
        EpochRecord {
            epoch,
            total: self.total / self.n,
            recon_image: get(Modality::Image),
            recon_text: get(Modality::Text),
            recon_traj: get(Modality::Trajectory),
            kl: self.kl / self.n,
            objective_kind: kind,
        }
    }
}

fn read_log(path: &Path) -> Result<Vec<EpochRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    fs::read_to_string(path)?.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

fn write_log(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

/// Trains a fresh model. All randomness derives from `opts.seed`.
pub fn train(config: ModelConfig, ds: &Dataset, opts: &TrainOptions, out_dir: &Path) -> Result<TrainOutcome> {
    check_compatible(&config, ds)?;
    let model = MultimodalVae::new(config, opts.seed)?;
    let adam = AdamConfig { learning_rate: opts.learning_rate, ..AdamConfig::default() };
    let opt = Adam::new(adam, model.store().vars())?;
    let rng = ChaCha8Rng::from_seed(derive_seed(opts.seed, "train", 0));
    fs::create_dir_all(out_dir)?;
    write_log(&out_dir.join(LOSS_LOG_FILE), &[])?;
    run(model, opt, rng, 0, Vec::new(), ds, opts, out_dir)
}

/// Continues from a checkpoint up to `opts.epochs` total epochs. The seed
/// and optimizer settings stored in the checkpoint take precedence.
pub fn resume(ckpt: &Checkpoint, ds: &Dataset, opts: &TrainOptions, out_dir: &Path) -> Result<TrainOutcome> {
    check_compatible(&ckpt.config, ds)?;
    let model = ckpt.model()?;
    let opt = ckpt.optimizer()?;
    let rng = ckpt.rng.restore()?;
    fs::create_dir_all(out_dir)?;
    let log = out_dir.join(LOSS_LOG_FILE);
    let mut history = read_log(&log)?;
    history.retain(|r| r.epoch <= ckpt.epoch);
    write_log(&log, &history)?;
    let opts = TrainOptions { seed: ckpt.seed, learning_rate: opt.config.learning_rate, ..opts.clone() };
    run(model, opt, rng, ckpt.epoch, history, ds, &opts, out_dir)
}

#[allow(clippy::too_many_arguments)]
fn run(
    model: MultimodalVae,
    mut opt: Adam,
    mut rng: ChaCha8Rng,
    start_epoch: usize,
    mut history: Vec<EpochRecord>,
    ds: &Dataset,
    opts: &TrainOptions,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    if opts.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let kind = model.config().model_kind.objective();
    let meta = RunMetadata {
        optimizer: Adam::NAME.into(),
        optimizer_config: opt.config,
        options: opts.clone(),
        objective_kind: kind,
        model: model.config().clone(),
        dataset: ds.manifest.config.name.clone(),
        dataset_seed: ds.manifest.seed,
        dataset_size: ds.len(),
    };
    fs::write(out_dir.join(RUN_FILE), serde_json::to_string_pretty(&meta)?)?;
    let ckpt_path = out_dir.join(CHECKPOINT_FILE);
    let log_path = out_dir.join(LOSS_LOG_FILE);
    let vocab = model.config().vocabulary.len();
    let dtype = model.dtype();
    let mut order: Vec<usize> = (0..ds.len()).collect();
    for epoch in start_epoch + 1..=opts.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut acc = Accumulator::new();
        for (step, chunk) in order.chunks(opts.batch_size).enumerate() {
            let batch = Batch::from_dataset(ds, chunk, dtype, vocab)?;
            let rng_before = rng.clone();
            let obj = training_objective(&model, &batch, &mut rng)?;
            if !obj.breakdown.total.is_finite() {
                let saved = out_dir.join(LAST_GOOD_FILE);
                Checkpoint::capture(&model, &opt, epoch - 1, opts.seed, &rng_before)?.save(&saved)?;
                return Err(Error::NonFinite { epoch, step, saved: saved.display().to_string() });
            }
            let grads = gradients(&model, &obj.surrogate)?;
            opt.apply(model.store().vars(), &grads)?;
            acc.add(&obj.breakdown, chunk.len());
        }
        let record = acc.record(epoch, kind);
        let mut f = fs::OpenOptions::new().append(true).create(true).open(&log_path)?;
        writeln!(f, "{}", serde_json::to_string(&record)?)?;
        history.push(record);
        if epoch % opts.checkpoint_every.max(1) == 0 || epoch == opts.epochs {
            Checkpoint::capture(&model, &opt, epoch, opts.seed, &rng)?.save(&ckpt_path)?;
        }
    }
    if start_epoch >= opts.epochs {
        Checkpoint::capture(&model, &opt, start_epoch, opts.seed, &rng)?.save(&ckpt_path)?;
    }
    Ok(TrainOutcome { model, history, checkpoint: ckpt_path })
}
