//! Deterministic randomness.
//!
//! Every random draw in the crate comes from [`LabRng`], which is ChaCha with
//! 8 rounds (`rand_chacha::ChaCha8Rng`, rand_chacha 0.9) seeded through `seed_from_u64`.
//! Uniform reals are produced by `rand`'s `StandardUniform` distribution for `f64`
//! (53 random mantissa bits, range `[0, 1)`). Both algorithms are
//! value-stable across platforms, so a run is reproducible bit-for-bit
//! given its seed.
//!
//! Independent streams (one per completion, per step, per synthetic record)
//! are keyed with [`derive_seed`], a SHA-256 of the parent seed and a list of
//! integer labels truncated to 64 bits.

use rand::SeedableRng;
use sha2::{Digest, Sha256};

pub type LabRng = rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> LabRng {
    LabRng::seed_from_u64(seed)
}

/// Mixes a parent seed with integer labels into a child seed.
pub fn derive_seed(seed: u64, labels: &[u64]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for label in labels {
        hasher.update(label.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Hashes a string identifier under a seed; used to key synthetic embeddings.
pub fn hash_str(seed: u64, text: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
