//! Seed derivation for the portable noise generator.
//!
//! Every stochastic stream in the crate is a [`ChaCha8Rng`] seeded from a
//! 64-bit user seed and a small stream label, so results are reproducible
//! across platforms and independent of scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type NoiseRng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed for stream `label` of `seed`.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    mix(mix(seed) ^ label.wrapping_mul(0xD605_0B5F_3C8A_5E2B))
}

pub fn stream(seed: u64, label: u64) -> NoiseRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, label))
}
