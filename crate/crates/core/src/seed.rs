//! Seed derivation for the deterministic random streams.
//!
//! Every stochastic component (description noise, reservoirs, autouser
//! draws, question generation) owns a ChaCha stream whose seed is derived
//! from the master seed plus a fixed tag, so streams never share state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Values are part of the log format; do not renumber.
pub mod tag {
    pub const DESCRIPTION: u64 = 0x01;
    pub const RESERVOIR_RAW: u64 = 0x02;
    pub const RESERVOIR_DELTA: u64 = 0x03;
    pub const PROJECTION: u64 = 0x04;
    pub const QUESTION: u64 = 0x05;
    pub const AUTOUSER: u64 = 0x06;
    pub const NOISE: u64 = 0x07;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds an ordered list of words into one seed.
pub fn derive(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x5EED_u64, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(parts))
}
