//! Seeded random streams.
//!
//! Every stochastic routine takes `&mut RandomStream` explicitly, so a run is a
//! pure function of its configuration and seed. Child seeds are derived with a
//! counter scheme: `derive_seed(master, key, index)` mixes the master seed, a
//! stable 64-bit hash of a textual key and an integer counter through
//! SplitMix64. Any single replication can therefore be re-run in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RandomStream = ChaCha8Rng;

pub fn stream(seed: u64) -> RandomStream {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One SplitMix64 output step.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the UTF-8 bytes of `key`.
pub fn key_hash(key: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

pub fn derive_seed(master: u64, key: &str, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ key_hash(key)).wrapping_add(splitmix64(index)))
}

pub fn derived_stream(master: u64, key: &str, index: u64) -> RandomStream {
    stream(derive_seed(master, key, index))
}
