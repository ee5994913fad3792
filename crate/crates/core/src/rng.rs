//! Deterministic PRNG streams.
//!
//! Every stochastic component draws from a ChaCha8 generator seeded with the
//! run's master seed and placed on its own 64-bit stream id with
//! `set_stream`. Streams with different ids never overlap, so a simulation,
//! a noise generator and a training run can share one master seed without
//! sharing random numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type FlowRng = ChaCha8Rng;

pub fn stream_rng(master_seed: u64, stream: u64) -> FlowRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// Stream id for a named component and an index inside it.
pub fn stream_id(component: &str, index: u64) -> u64 {
    // FNV-1a over the component name, mixed with the index.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in component.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}
