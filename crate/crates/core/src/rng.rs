//! Deterministic per-(client, round) randomness.
//!
//! Every client-round owns a private ChaCha8 stream whose 64-bit seed is
//!
//! ```text
//! seed = fmix(fmix(master ^ 0x9E3779B97F4A7C15) ^ ((client << 32) | round))
//! ```
//!
//! where `fmix` is the SplitMix64 finalizer
//! (`z ^= z >> 30; z *= 0xBF58476D1CE4E5B9; z ^= z >> 27; z *= 0x94D049BB133111EB; z ^= z >> 31`).
//! `fmix` is a bijection on `u64`, so for a fixed master seed distinct
//! `(client, round)` pairs with both components below `2^32` always map to
//! distinct seeds.
//!
//! Gaussian variates come from `rand_distr::StandardNormal` (ziggurat).
//! Streams are reproducible within this implementation; bit-exactness against
//! other implementations is not a goal.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output finalizer.
#[inline]
pub fn fmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The 64-bit seed of the stream owned by `(client_id, round)`.
pub fn stream_seed(master_seed: u64, client_id: u64, round: u64) -> u64 {
    debug_assert!(client_id < 1 << 32 && round < 1 << 32);
    let packed = (client_id << 32) | (round & 0xFFFF_FFFF);
    fmix64(fmix64(master_seed ^ GOLDEN_GAMMA) ^ packed)
}

/// A seeded source of standard-normal draws used by exactly one client-round.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn from_seed(seed: u64) -> Self {
        NoiseStream {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    #[inline]
    pub fn gaussian(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// `out[k] += scale * z_k` with fresh standard normals `z_k`.
    pub fn add_gaussian(&mut self, scale: f64, out: &mut [f64]) {
        for x in out {
            *x += scale * self.gaussian();
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

pub fn derive_noise_stream(master_seed: u64, client_id: usize, round: usize) -> NoiseStream {
    NoiseStream::from_seed(stream_seed(master_seed, client_id as u64, round as u64))
}

/// General-purpose seeded generator for data synthesis and shuffling.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(fmix64(seed ^ 0xD1B5_4A32_D192_ED03))
}
