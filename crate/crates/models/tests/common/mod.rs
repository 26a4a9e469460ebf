#![allow(dead_code)]

use candle_core::DType;
use mmvae_core::scene::{ImageTensor, TokenSequence, Trajectory, PAD};
use mmvae_models::data::Example;
use mmvae_models::{Batch, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random examples shaped for `cfg`: uniform pixels, 2..=L words and
/// trajectories of 2..=t_max steps.
pub struct Toy {
    pub images: Vec<ImageTensor>,
    pub texts: Vec<TokenSequence>,
    pub trajectories: Vec<Trajectory>,
}

impl Toy {
    pub fn new(cfg: &ModelConfig, n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = cfg.image.size;
        let words = cfg.vocabulary.len() - 1;
        let mut toy = Toy { images: Vec::new(), texts: Vec::new(), trajectories: Vec::new() };
        for _ in 0..n {
            let pixels = (0..s * s * 3).map(|_| rng.random::<f32>()).collect();
            toy.images.push(ImageTensor::new(s, s, pixels).unwrap());
            let len = rng.random_range(2..=cfg.text_len);
            let mut tokens: Vec<usize> = (0..len).map(|_| rng.random_range(0..words)).collect();
            tokens.resize(cfg.text_len, PAD);
            toy.texts.push(TokenSequence::new(tokens).unwrap());
            let t = rng.random_range(2..=cfg.t_max);
            let steps = (0..t)
                .map(|_| [rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(0.0..0.2), rng.random_range(0.0..1.0)])
                .collect();
            toy.trajectories.push(Trajectory::new(steps).unwrap());
        }
        toy
    }

    pub fn batch(&self, cfg: &ModelConfig) -> Batch {
        let dtype = if cfg.double_precision { DType::F64 } else { DType::F32 };
        let examples: Vec<Example<'_>> = (0..self.images.len())
            .map(|i| Example { image: &self.images[i], text: &self.texts[i], trajectory: &self.trajectories[i] })
            .collect();
        Batch::from_examples(&examples, cfg.text_len, dtype, cfg.vocabulary.len()).unwrap()
    }
}

pub fn toy_batch(cfg: &ModelConfig, n: usize, seed: u64) -> Batch {
    Toy::new(cfg, n, seed).batch(cfg)
}

pub fn to_vec(t: &candle_core::Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
