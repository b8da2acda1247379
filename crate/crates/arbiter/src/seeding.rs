//! Deterministic RNG derivation.
//!
//! Every random choice in the harness flows through a ChaCha8 stream seeded
//! by hashing a purpose label, the run seed, and a context key. Streams are
//! therefore stable across platforms and independent of processing order,
//! and the (algorithm, seed) pair recorded in run manifests is sufficient to
//! replay any draw.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Name recorded in manifests for the sampling/shuffling scheme.
pub const SAMPLER_ALGORITHM: &str = "sha256-keyed chacha8 / fisher-yates";

/// Collapses (label, seed, key) into a 64-bit seed.
pub fn derive_seed(label: &str, seed: u64, key: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(label.as_bytes());
    hasher.update([0x1f]);
    hasher.update(seed.to_le_bytes());
    hasher.update([0x1f]);
    hasher.update(key.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

pub fn rng_for(label: &str, seed: u64, key: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(label, seed, key))
}

/// Fisher-Yates permutation of 0..k.
pub fn shuffled_indices(k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..k).collect();
    for i in (1..k).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }
    indices
}

/// First `take` positions of a Fisher-Yates permutation of 0..n: a uniform
/// sample without replacement, in draw order.
pub fn sample_indices(n: usize, take: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    assert!(take <= n, "cannot sample {take} of {n}");
    let mut indices: Vec<usize> = (0..n).collect();
    for i in 0..take {
        let j = rng.gen_range(i..n);
        indices.swap(i, j);
    }
    indices.truncate(take);
    indices
}
