use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use mmvae_core::dataset::{generate_dataset, Dataset, MANIFEST};
use mmvae_core::scene::{median_script_length, DatasetConfig, IMAGE_SIZE, PRESET_NAMES};
use mmvae_models::checkpoint::Checkpoint;
use mmvae_models::eval::{curve_from_report, evaluate_success, grid_report, RunSummary};
use mmvae_models::trainer::{self, EpochRecord, TrainOptions};
use mmvae_models::{Modality, ModelConfig, ModelKind, ReconKind};
use serde_json::Value;

use crate::{ModelArg, ReconArg};

pub const ACCURACY_FILE: &str = "accuracy.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.jsonl";
pub const CURVE_FILE: &str = "curve.csv";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags or config files.
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<mmvae_models::Error> for CliError {
    fn from(e: mmvae_models::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<mmvae_core::Error> for CliError {
    fn from(e: mmvae_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

fn dataset_config(path: &Path) -> Result<DatasetConfig> {
    DatasetConfig::from_json(&read_text(path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn gen_data(config: &Path, n: usize, seed: u64, out: &Path) -> Result<()> {
    let cfg = dataset_config(config)?;
    if n == 0 {
        return Err(CliError::Usage("--n must be positive".into()));
    }
    let manifest = generate_dataset(&cfg, n, seed, out)?;
    println!("{}", out.join(MANIFEST).display());
    eprintln!("{} samples of `{}` (seed {})", manifest.n, manifest.config.name, manifest.seed);
    Ok(())
}

pub struct TrainArgs {
    pub model: Option<ModelArg>,
    pub recon: ReconArg,
    pub data: PathBuf,
    pub epochs: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub checkpoint_every: usize,
    pub model_config: Option<PathBuf>,
    pub resume: Option<PathBuf>,
}

/// Overlays a partial JSON object onto `base`, recursing into nested objects.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

fn model_config(args: &TrainArgs) -> Result<ModelConfig> {
    let kind = match args.model {
        Some(ModelArg::Mvae) | None => ModelKind::Mvae,
        Some(ModelArg::Mmvae) => ModelKind::Mmvae,
        Some(ModelArg::Mopoe) => ModelKind::Mopoe,
    };
    let recon = match args.recon {
        ReconArg::Mse => ReconKind::Mse,
        ReconArg::Sigma => ReconKind::SigmaVae,
    };
    let mut value = serde_json::to_value(ModelConfig::new(kind)).expect("config serializes");
    if let Some(path) = &args.model_config {
        let patch: Value = serde_json::from_str(&read_text(path)?)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        if !patch.is_object() {
            return Err(CliError::Usage(format!("{}: expected a JSON object", path.display())));
        }
        merge(&mut value, patch);
    }
    let cfg: ModelConfig = serde_json::from_value(value)
        .map_err(|e| CliError::Usage(format!("model config: {e}")))?;
    let cfg = ModelConfig { model_kind: kind, ..cfg }.with_recon(recon);
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn print_record(r: &EpochRecord) {
    let part = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
    println!(
        "epoch {} total {:.6} recon_image {} recon_text {} recon_traj {} kl {:.6}",
        r.epoch,
        r.total,
        part(r.recon_image),
        part(r.recon_text),
        part(r.recon_traj),
        r.kl
    );
}

pub fn train(args: TrainArgs) -> Result<()> {
    if args.batch_size == 0 || args.epochs == 0 {
        return Err(CliError::Usage("--epochs and --batch-size must be positive".into()));
    }
    if !(args.learning_rate > 0.0) {
        return Err(CliError::Usage("--learning-rate must be positive".into()));
    }
    let ds = Dataset::load(&args.data)?;
    let opts = TrainOptions {
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        seed: args.seed,
        checkpoint_every: args.checkpoint_every,
    };
    let outcome = match &args.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            trainer::resume(&ckpt, &ds, &opts, &args.out)?
        }
        None => trainer::train(model_config(&args)?, &ds, &opts, &args.out)?,
    };
    match outcome.history.last() {
        Some(r) => print_record(r),
        None => println!("no epochs left to run"),
    }
    println!("{}", outcome.checkpoint.display());
    Ok(())
}

fn parse_thresholds(text: &str) -> Result<Vec<f64>> {
    let values = text
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("bad threshold `{s}`"))))
        .collect::<Result<Vec<_>>>()?;
    if values.iter().any(|v| v.is_nan() || *v < 0.0) {
        return Err(CliError::Usage("thresholds must be non-negative".into()));
    }
    if values.windows(2).any(|w| w[0] > w[1]) {
        return Err(CliError::Usage(format!("thresholds must be sorted ascending: {text}")));
    }
    Ok(values)
}

/// Refuses checkpoints that cannot run the trajectory inference on `cfg`.
fn check_eval_compatible(model: &ModelConfig, cfg: &DatasetConfig) -> Result<()> {
    let mismatch = |what: String| Err(CliError::Runtime(format!("checkpoint cannot be evaluated on `{}`: {what}", cfg.name)));
    for m in Modality::ALL {
        if !model.has(m) {
            return mismatch(format!("the model has no {} codec", m.name()));
        }
    }
    if model.image.size != IMAGE_SIZE {
        return mismatch(format!("the model reads {0}x{0} images", model.image.size));
    }
    let vocab: Vec<String> = mmvae_core::scene::VOCABULARY.iter().map(|s| s.to_string()).collect();
    if model.vocabulary != vocab {
        return mismatch("vocabulary differs".into());
    }
    for &task in &cfg.tasks {
        let length = median_script_length(cfg, task)?;
        if length > model.t_max {
            return mismatch(format!("{} needs {length} steps, the model decodes at most {}", task.name(), model.t_max));
        }
    }
    Ok(())
}

pub fn eval(ckpt: &Path, config: &Path, trials: usize, seed: u64, curve: Option<&str>, out: &Path) -> Result<()> {
    let cfg = dataset_config(config)?;
    let thresholds = curve.map(parse_thresholds).transpose()?;
    if trials == 0 {
        return Err(CliError::Usage("--trials must be positive".into()));
    }
    let ckpt = Checkpoint::load(ckpt)?;
    check_eval_compatible(&ckpt.config, &cfg)?;
    let model = ckpt.model()?;
    let report = evaluate_success(&model, &cfg, trials, seed)?;
    fs::create_dir_all(out)?;
    let mut diag = fs::File::create(out.join(DIAGNOSTICS_FILE))?;
    for t in &report.trials {
        writeln!(diag, "{}", serde_json::to_string(t).expect("diagnostics serialize"))?;
    }
    let points = match &thresholds {
        Some(t) => curve_from_report(&report, t)?,
        None => Vec::new(),
    };
    if thresholds.is_some() {
        let mut f = fs::File::create(out.join(CURVE_FILE))?;
        writeln!(f, "threshold_m,accuracy")?;
        for (t, a) in &points {
            writeln!(f, "{t},{a}")?;
        }
    }
    let cfg_model = model.config();
    let summary = RunSummary {
        model: cfg_model.model_kind.name().into(),
        recon: cfg_model.recon_trajectory.name().into(),
        cell: cfg.name.clone(),
        accuracy: report.accuracy,
        n_trials: report.n_trials,
        seed,
        inference_fusion: serde_json::to_value(cfg_model.inference_fusion)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default(),
        curve: points,
    };
    fs::write(out.join(ACCURACY_FILE), serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n")?;
    println!("accuracy {} ({} trials)", report.accuracy, report.n_trials);
    Ok(())
}

pub fn report(pattern: &str, out: &Path) -> Result<()> {
    let paths = glob::glob(pattern).map_err(|e| CliError::Usage(format!("bad glob `{pattern}`: {e}")))?;
    let mut files: Vec<PathBuf> = paths.filter_map(|p| p.ok()).filter(|p| p.is_file()).collect();
    files.sort();
    let mut runs = Vec::new();
    for path in &files {
        let parsed = fs::read_to_string(path)
            .map_err(|e| e.to_string())
            .and_then(|text| serde_json::from_str::<RunSummary>(&text).map_err(|e| e.to_string()));
        match parsed {
            Ok(run) if (0.0..=1.0).contains(&run.accuracy) => runs.push(run),
            Ok(_) => eprintln!("warning: skipping {}: accuracy outside [0, 1]", path.display()),
            Err(e) => eprintln!("warning: skipping {}: {e}", path.display()),
        }
    }
    if runs.is_empty() {
        return Err(CliError::Runtime(format!("no valid run files match `{pattern}`")));
    }
    let present: BTreeSet<&str> = runs.iter().map(|r| r.cell.as_str()).collect();
    let mut cells: Vec<String> = PRESET_NAMES.iter().filter(|n| present.contains(*n)).map(|s| s.to_string()).collect();
    cells.extend(present.iter().filter(|c| !PRESET_NAMES.contains(c)).map(|s| s.to_string()));
    fs::create_dir_all(out)?;
    let grid = grid_report(&runs, &cells, out)?;
    println!("{} runs, {} rows", runs.len(), grid.rows.len());
    if let Some(m) = grid.mean_improvement {
        println!("mean sigma - mse accuracy: {m:+.4}");
    }
    Ok(())
}

pub fn presets(out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    for cfg in DatasetConfig::presets() {
        fs::write(out.join(format!("{}.json", cfg.name)), cfg.to_json() + "\n")?;
    }
    println!("{} presets in {}", PRESET_NAMES.len(), out.display());
    Ok(())
}
