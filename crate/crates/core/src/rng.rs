//! Seeded, platform-independent random streams.
//!
//! Every random quantity in the crate comes from a ChaCha8 stream keyed by
//! `(seed, purpose)` with the ChaCha stream id set to a per-item index, so
//! example `i` of a simulation (or the noise for test sample `i`) does not
//! depend on how many items were generated before it or on thread count.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Purpose tags keeping independent consumers of one seed apart.
pub mod purpose {
    pub const SIMULATE: u64 = 1;
    pub const BALANCE: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const INIT: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const TRAIN_NOISE: u64 = 6;
    pub const EVAL_NOISE: u64 = 7;
}

pub fn stream(seed: u64, purpose: u64, index: u64) -> Stream {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&purpose.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// A fresh `u64` drawn from `rng`, for deriving child streams.
pub fn child_seed(rng: &mut impl RngCore) -> u64 {
    rng.next_u64()
}

/// `+1.0` or `-1.0` with equal probability, from one bit of a `u32` draw.
pub fn rademacher(rng: &mut impl RngCore) -> f64 {
    if rng.next_u32() >> 31 == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Bernoulli trial from a uniform draw in `[0, 1)`.
pub fn bernoulli(rng: &mut impl Rng, p: f64) -> bool {
    rng.random::<f64>() < p
}
