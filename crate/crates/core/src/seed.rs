//! Seed derivation.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from a 64-bit
//! value obtained by mixing a master seed with a `(stream, index)` counter
//! through splitmix64. Derived seeds depend only on their own coordinates,
//! so adding trials never perturbs the streams of existing trials.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags. Distinct tags keep construction, sampling, data generation
/// and noise streams independent of one another.
pub mod stream {
    pub const CONSTRUCT: u64 = 0x01;
    pub const SAMPLER: u64 = 0x02;
    pub const INIT: u64 = 0x03;
    pub const PROBLEM: u64 = 0x04;
    pub const NOISE: u64 = 0x05;
    pub const TRIAL: u64 = 0x06;
    pub const SPECTRAL: u64 = 0x07;
    pub const SIZE: u64 = 0x08;
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// One splitmix64 output step applied to `state`.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed for `(stream, index)` under `master`.
pub fn derive(master: u64, stream: u64, index: u64) -> u64 {
    let a = splitmix64(master ^ splitmix64(stream));
    splitmix64(a ^ index.wrapping_mul(GOLDEN))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(master: u64, stream: u64, index: u64) -> Rng {
    rng(derive(master, stream, index))
}
