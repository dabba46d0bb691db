//! Seed derivation for reproducible experiment streams.
//!
//! Every stochastic choice in the library draws from a ChaCha8 stream keyed
//! by (base seed, stream tag, index), so reruns with the same seed are
//! bit-identical and independent streams never alias.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags, one per kind of randomness.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const AWGN: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const ATTACK: u64 = 4;
    pub const SYNTH: u64 = 5;
    pub const SPLIT: u64 = 6;
    pub const CHECK: u64 = 7;
}

/// RNG keyed by (seed, tag, index); the triple is packed straight into the
/// ChaCha key, so distinct triples give unrelated streams.
pub fn stream_rng(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&tag.to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// n independent standard-normal draws.
pub fn randn_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    use rand::Rng;
    (0..n)
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect()
}

/// Derive a child seed, e.g. one independent training seed per fold.
pub fn derive_seed(base: u64, tag: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(tag.wrapping_add(1)))
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
