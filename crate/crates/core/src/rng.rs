//! Counter-based random streams.
//!
//! Every stochastic component draws from a ChaCha stream whose key is built
//! from `(master seed, domain, index)`, so any episode or sweep cell can be
//! replayed in isolation and in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream domains. Distinct domains never share key material.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    TrainingData = 1,
    Init = 2,
    TrainEpisode = 3,
    EvalEpisode = 4,
    Latency = 5,
    Misc = 6,
}

pub fn stream(master: u64, domain: Domain, index: u64) -> StreamRng {
    let mut seed = [0u8; 32];
    seed[0..8].copy_from_slice(&master.to_le_bytes());
    seed[8..16].copy_from_slice(&(domain as u64).to_le_bytes());
    seed[16..24].copy_from_slice(&index.to_le_bytes());
    seed[24..32].copy_from_slice(b"ctrlsns1");
    ChaCha8Rng::from_seed(seed)
}

/// Mixes extra words into a seed (splitmix64 finalizer); used to derive
/// per-cell master seeds from a sweep seed and cell coordinates.
pub fn derive_seed(master: u64, words: &[u64]) -> u64 {
    let mut h = master ^ 0x9E37_79B9_7F4A_7C15;
    for &w in words {
        h = splitmix(h ^ w);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
