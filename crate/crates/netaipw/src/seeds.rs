//! Splittable seed derivation.
//!
//! Every random stage in the crate draws from its own ChaCha stream whose
//! seed is derived from a parent seed and a fixed tag. Derivation is pure,
//! so any pipeline stage can be recomputed in isolation and adding stages
//! never reorders the draws of existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Fixed tags, one per random stage.
pub mod tag {
    pub const CONFOUNDER: u64 = 0x01;
    pub const TREATMENT: u64 = 0x02;
    pub const OUTCOME: u64 = 0x03;
    pub const REPETITION: u64 = 0x04;
    pub const FOLDS: u64 = 0x05;
    pub const FIT: u64 = 0x06;
    pub const FIT_G1: u64 = 0x07;
    pub const FIT_G0: u64 = 0x08;
    pub const FIT_H: u64 = 0x09;
    pub const TREE: u64 = 0x0a;
    pub const NETWORK: u64 = 0x0b;
    pub const DATA: u64 = 0x0c;
    pub const ORACLE: u64 = 0x0d;
    pub const ESTIMATOR: u64 = 0x0e;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for stage `tag` under `seed`.
pub fn derive(seed: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ tag.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

/// Child seed for the `i`-th item of stage `tag`.
pub fn derive2(seed: u64, tag: u64, i: u64) -> u64 {
    derive(derive(seed, tag), i)
}

/// Child seed for item `(i, j)` of stage `tag`.
pub fn derive3(seed: u64, tag: u64, i: u64, j: u64) -> u64 {
    derive(derive2(seed, tag, i), j)
}

/// Deterministic generator for a derived seed.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
