use std::path::Path;

use mmvae_core::dataset::{generate_dataset, Dataset};
use mmvae_core::scene::DatasetConfig;
use mmvae_models::checkpoint::Checkpoint;
use mmvae_models::trainer::{resume, train, TrainOptions, CHECKPOINT_FILE, LOSS_LOG_FILE, RUN_FILE};
use mmvae_models::{Error, ModelConfig, ModelKind};

fn dataset(dir: &Path, n: usize) -> Dataset {
    generate_dataset(&DatasetConfig::preset("fixed-reach").unwrap(), n, 3, dir).unwrap();
    Dataset::load(dir).unwrap()
}

fn small(kind: ModelKind) -> ModelConfig {
    ModelConfig { double_precision: true, ..ModelConfig::small(kind) }
}

fn params(ckpt: &Checkpoint) -> Vec<Vec<f64>> {
    ckpt.params.iter().map(|p| p.data.clone()).collect()
}

#[test]
fn two_epochs_give_two_records_and_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = dataset(&tmp.path().join("data"), 8);
    let out = tmp.path().join("run");
    let opts = TrainOptions { epochs: 2, batch_size: 4, seed: 5, ..Default::default() };
    for kind in [ModelKind::Mvae, ModelKind::Mmvae, ModelKind::Mopoe] {
        let outcome = train(small(kind), &ds, &opts, &out).unwrap();
        assert_eq!(outcome.history.len(), 2);
        assert!(outcome.history.iter().all(|r| r.total.is_finite() && r.recon_traj.is_some()));
        assert_eq!(outcome.history[0].objective_kind, kind.objective());
        let log = std::fs::read_to_string(out.join(LOSS_LOG_FILE)).unwrap();
        assert_eq!(log.lines().count(), 2);
        assert!(out.join(CHECKPOINT_FILE).exists());
        let run: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join(RUN_FILE)).unwrap()).unwrap();
        assert_eq!(run["optimizer"], "adam");
    }
}

#[test]
fn same_seed_gives_identical_parameters_and_history() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = dataset(&tmp.path().join("data"), 8);
    let opts = TrainOptions { epochs: 2, batch_size: 4, seed: 9, ..Default::default() };
    let a = train(small(ModelKind::Mvae), &ds, &opts, &tmp.path().join("a")).unwrap();
    let b = train(small(ModelKind::Mvae), &ds, &opts, &tmp.path().join("b")).unwrap();
    assert_eq!(a.history, b.history);
    let (ca, cb) = (Checkpoint::load(&a.checkpoint).unwrap(), Checkpoint::load(&b.checkpoint).unwrap());
    assert_eq!(params(&ca), params(&cb));
    assert_eq!(std::fs::read(&a.checkpoint).unwrap(), std::fs::read(&b.checkpoint).unwrap());
    let c = train(small(ModelKind::Mvae), &ds, &TrainOptions { seed: 10, ..opts }, &tmp.path().join("c")).unwrap();
    assert_ne!(params(&ca), params(&Checkpoint::load(&c.checkpoint).unwrap()));
}

#[test]
fn resuming_matches_an_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = dataset(&tmp.path().join("data"), 8);
    let opts = TrainOptions { epochs: 4, batch_size: 4, seed: 2, checkpoint_every: 2, ..Default::default() };
    let full = train(small(ModelKind::Mvae), &ds, &opts, &tmp.path().join("full")).unwrap();
    let half = train(small(ModelKind::Mvae), &ds, &TrainOptions { epochs: 2, ..opts.clone() }, &tmp.path().join("half")).unwrap();
    let ckpt = Checkpoint::load(&half.checkpoint).unwrap();
    let resumed = resume(&ckpt, &ds, &opts, &tmp.path().join("half")).unwrap();
    assert_eq!(resumed.history, full.history);
    assert_eq!(params(&Checkpoint::load(&resumed.checkpoint).unwrap()), params(&Checkpoint::load(&full.checkpoint).unwrap()));
}

#[test]
fn incompatible_dataset_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = dataset(&tmp.path().join("data"), 4);
    let opts = TrainOptions { epochs: 1, batch_size: 4, ..Default::default() };
    let tiny = ModelConfig::tiny(ModelKind::Mvae);
    assert!(matches!(train(tiny, &ds, &opts, &tmp.path().join("x")), Err(Error::Config(_))));
}
