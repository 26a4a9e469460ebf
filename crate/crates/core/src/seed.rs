//! Seed derivation. Every random stream in the pipeline is named by a
//! purpose string and an index, hashed together with the root seed, so
//! streams for different purposes never overlap.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive_seed(root: u64, purpose: &str, index: u64) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update((purpose.len() as u64).to_le_bytes());
    hasher.update(purpose.as_bytes());
    hasher.update(index.to_le_bytes());
    hasher.finalize().into()
}

pub fn derive_u64(root: u64, purpose: &str, index: u64) -> u64 {
    let bytes = derive_seed(root, purpose, index);
    u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
}

pub fn rng_for(root: u64, purpose: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(root, purpose, index))
}
