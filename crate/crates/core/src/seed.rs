//! Deterministic seed derivation.
//!
//! Every random quantity in the pipeline (encoder projection, transformer
//! weights, k-means restarts, pair sampling, synthetic streams) draws from a
//! ChaCha stream whose seed is derived from the user seed plus a key that
//! names the quantity. Keys are hashed with FNV-1a and mixed with SplitMix64 so
//! the derivation is stable across platforms and compiler versions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Derives a child seed from `seed`, a textual key and an index.
pub fn derive_seed(seed: u64, key: &str, index: u64) -> u64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ fnv1a(key.as_bytes()));
    splitmix64(h ^ index)
}

/// A ChaCha8 generator keyed by `(seed, key, index)`.
pub fn keyed_rng(seed: u64, key: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, key, index))
}
