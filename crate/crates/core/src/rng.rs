//! Seed derivation for reproducible, order-independent randomness.
//!
//! Every random draw in the crate comes from a ChaCha8 stream whose seed is a
//! pure function of a master seed and a short path of integers (domain tag,
//! trial index, user index, ...). Two calls with the same path always see the
//! same stream, no matter which thread makes them or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Domain tags keep streams for different purposes disjoint.
pub mod domain {
    pub const POPULATION: u64 = 0x504f_5055;
    pub const QUERY: u64 = 0x5155_4552;
    pub const MECHANISM: u64 = 0x4d45_4348;
    pub const TRIAL: u64 = 0x5452_4941;
}

/// SplitMix64 finalizer.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes `seed` together with `path` into a new 64-bit seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut h = mix64(seed ^ 0x9e37_79b9_7f4a_7c15);
    for &p in path {
        h = mix64(h.wrapping_add(0x9e37_79b9_7f4a_7c15) ^ mix64(p.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    h
}

pub fn stream(seed: u64, path: &[u64]) -> StreamRng {
    let s = derive_seed(seed, path);
    let mut bytes = [0u8; 32];
    for (i, chunk) in bytes.chunks_exact_mut(8).enumerate() {
        chunk.copy_from_slice(&mix64(s.wrapping_add(i as u64)).to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}
