//! Named random streams derived from one global seed.
//!
//! `(seed, name)` maps to an independent generator, so adding a new consumer
//! never shifts the draws seen by existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sub-seed for a named stream.
pub fn derive(seed: u64, name: &str) -> u64 {
    splitmix(splitmix(seed) ^ fnv1a(name.as_bytes()))
}

/// Sub-seed for a named stream indexed by integers (epoch, clip id, ...).
pub fn derive_indexed(seed: u64, name: &str, index: &[u64]) -> u64 {
    index.iter().fold(derive(seed, name), |acc, &i| splitmix(acc ^ splitmix(i)))
}

pub fn stream(seed: u64, name: &str) -> StreamRng {
    StreamRng::seed_from_u64(derive(seed, name))
}

pub fn stream_indexed(seed: u64, name: &str, index: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_indexed(seed, name, index))
}
