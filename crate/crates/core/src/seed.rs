//! Deterministic seed derivation.
//!
//! Every random stream in the crate is keyed by a path of integers hashed
//! down from a single root seed, so results never depend on iteration order
//! or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash a parent seed and a child key into a new seed.
pub fn derive(parent: u64, key: u64) -> u64 {
    mix(parent.wrapping_add(GOLDEN).wrapping_add(mix(key.wrapping_mul(GOLDEN) ^ 0x5851_F42D_4C95_7F2D)))
}

pub fn derive2(parent: u64, a: u64, b: u64) -> u64 {
    derive(derive(parent, a), b)
}

/// Map a seed to a uniform draw in [0, 1) with 53 bits of resolution.
pub fn unit(seed: u64) -> f64 {
    (mix(seed) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
