//! Stateless per-realization seed derivation.
//!
//! Seeds are a pure function of `(master_seed, index)`, so ensembles give the
//! same per-index streams however the work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finaliser.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for realization `index` of an ensemble driven by `master_seed`.
pub fn derive_seed(master_seed: u64, index: u64) -> u64 {
    mix64(mix64(master_seed) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
