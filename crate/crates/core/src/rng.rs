//! Counter-based seeding.
//!
//! Every random draw in a run is keyed by `(seed, domain, a, b)` so that the
//! value does not depend on the order in which workers ask for it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Key domains. Distinct domains never share a ChaCha key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Noise = 1,
    Init = 2,
    Run = 3,
    Problem = 4,
    Coupling = 5,
}

/// Build a generator whose stream depends only on its four key words.
pub fn keyed_rng(seed: u64, domain: Domain, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(domain as u64).to_le_bytes());
    key[16..24].copy_from_slice(&a.to_le_bytes());
    key[24..].copy_from_slice(&b.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// SplitMix64 finalizer, used to derive child seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the `index`-th independent repetition of an experiment.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}
