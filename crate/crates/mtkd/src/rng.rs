//! Deterministic RNG streams.
//!
//! Every random decision in the crate flows from one global seed through
//! named sub-streams, so that e.g. data generation and weight init stay
//! independent: changing the synthetic dataset spec never shifts the model
//! init stream. Per-sample streams are keyed by index so parallel generation
//! cannot reorder draws.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; decorrelates nearby seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash_name(name: &str) -> u64 {
    // FNV-1a over the stream name.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// A named sub-stream of the global seed.
pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed ^ hash_name(name)))
}

/// A named sub-stream further keyed by an index (sample number, iteration, ...).
pub fn indexed_stream(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(seed ^ hash_name(name)) ^ index))
}
