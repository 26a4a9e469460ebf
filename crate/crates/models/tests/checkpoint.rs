mod common;

use candle_core::{DType, Device, Tensor};
use common::to_vec;
use mmvae_models::checkpoint::Checkpoint;
use mmvae_models::optim::{Adam, AdamConfig};
use mmvae_models::{Error, ModelConfig, ModelKind, MultimodalVae};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn capture(kind: ModelKind, double: bool) -> (MultimodalVae, Checkpoint) {
    let cfg = ModelConfig { double_precision: double, ..ModelConfig::tiny(kind) };
    let model = MultimodalVae::new(cfg, 4).unwrap();
    let opt = Adam::new(AdamConfig::default(), model.store().vars()).unwrap();
    let rng = ChaCha8Rng::seed_from_u64(77);
    let ckpt = Checkpoint::capture(&model, &opt, 3, 4, &rng).unwrap();
    (model, ckpt)
}

#[test]
fn save_load_save_is_byte_identical() {
    for (kind, double) in [(ModelKind::Mvae, false), (ModelKind::Mmvae, true)] {
        let (_, ckpt) = capture(kind, double);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        let again = dir.path().join("b.ckpt");
        loaded.save(&again).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
        assert_eq!(loaded.epoch, 3);
    }
}

#[test]
fn truncated_or_corrupted_files_fail_integrity() {
    let (_, ckpt) = capture(ModelKind::Mvae, false);
    let bytes = ckpt.to_bytes().unwrap();
    for cut in [0, 7, 20, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Integrity(_))), "cut at {cut}");
    }
    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x40;
    assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::Integrity(_))));
    let mut version = bytes;
    version[8] = 99;
    assert!(matches!(Checkpoint::from_bytes(&version), Err(Error::Integrity(_))));
}

#[test]
fn restored_model_infers_identically() {
    let (model, ckpt) = capture(ModelKind::Mopoe, false);
    let restored = Checkpoint::from_bytes(&ckpt.to_bytes().unwrap()).unwrap().model().unwrap();
    let z = Tensor::from_vec((0..8).map(|i| i as f32 * 0.1 - 0.3).collect::<Vec<_>>(), (2, 4), &Device::Cpu).unwrap();
    assert_eq!(to_vec(&model.decode_trajectory(&z, 5).unwrap()), to_vec(&restored.decode_trajectory(&z, 5).unwrap()));
    assert_eq!(to_vec(&model.decode_image(&z).unwrap()), to_vec(&restored.decode_image(&z).unwrap()));
    assert_eq!(to_vec(&model.decode_text(&z, 4).unwrap()), to_vec(&restored.decode_text(&z, 4).unwrap()));
    assert_eq!(restored.dtype(), DType::F32);
    assert_eq!(restored.config(), model.config());
}
