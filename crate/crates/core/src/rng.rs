//! Seeded randomness.
//!
//! Every stochastic step in the crate draws from [`ChaCha8Rng`], a
//! counter-based stream cipher generator whose output is fixed by its 64-bit
//! seed on every platform. Sub-streams (per epoch, per sample, per section)
//! get their own seed through [`derive_seed`], so results do not depend on
//! thread scheduling.

pub use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

/// Generator seeded from a 64-bit value.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of stream indices (SplitMix64 finalizer).
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}
