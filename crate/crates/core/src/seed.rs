//! Labeled sub-seed derivation.
//!
//! Every stochastic stage (generation, unknown injection, augmentation mocks,
//! shuffling, initialisation) draws from its own stream derived from a single
//! run seed, so changing one stage never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hash::Hasher;
use twox_hash::XxHash64;

/// Derive a sub-seed for `label` from the run seed.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut hasher = XxHash64::with_seed(seed);
    hasher.write(label.as_bytes());
    hasher.finish()
}

/// Seeded generator for the stream named `label`.
pub fn rng_for(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, label))
}

/// Stable 64-bit hash of a string under a seed; used by the feature hasher.
pub fn stable_hash(seed: u64, text: &str) -> u64 {
    let mut hasher = XxHash64::with_seed(seed);
    hasher.write(text.as_bytes());
    hasher.finish()
}
