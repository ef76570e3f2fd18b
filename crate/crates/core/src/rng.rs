//! Seeded random streams.
//!
//! Every stochastic component draws from ChaCha8 (portable, reproducible
//! across platforms). A master seed expands into independent named streams
//! so that, for example, truth and measurement noise stay identical across
//! fusion methods.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Truth = 1,
    Measurement = 2,
    Sampler = 3,
    TrueCorrelation = 4,
    Bias = 5,
    Initial = 6,
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for run/item `index` under `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix64(master ^ mix64(index.wrapping_add(0x5eed)))
}

/// Independent generator for `(master, stream, index)`.
pub fn stream_rng(master: u64, stream: Stream, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master, index));
    rng.set_stream(stream as u64);
    rng
}

pub fn seeded(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}
