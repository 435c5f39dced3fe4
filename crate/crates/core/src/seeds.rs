//! Seed derivation.
//!
//! Every random stream in the pipeline is keyed by `(master seed, stream
//! name, counter)`. The stream name is hashed with FNV-1a and the triple is
//! mixed with SplitMix64, so a partial pipeline (say, re-running only
//! training) draws exactly the numbers it would have drawn in a full run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for `stream` at position `counter`.
pub fn derive(master: u64, stream: &str, counter: u64) -> u64 {
    splitmix64(splitmix64(master ^ fnv1a(stream)).wrapping_add(counter))
}

pub fn rng(master: u64, stream: &str, counter: u64) -> Rng {
    Rng::seed_from_u64(derive(master, stream, counter))
}
