//! Deterministic derivation of independent random streams.
//!
//! Every random stream in a run is keyed by the global seed plus a short
//! path of integers (stage, epoch, sample index, ...), so results do not
//! depend on the order streams are created in or on thread scheduling.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `seed` with every element of `path` into a single 64-bit key.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(seed: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive(seed, path))
}

/// Uniform integer in `0..=hi` from a single 64-bit word `r`, as
/// `(r · (hi + 1)) >> 64`.
pub fn uniform_inclusive(rng: &mut Rng, hi: usize) -> usize {
    ((rng.next_u64() as u128 * (hi as u128 + 1)) >> 64) as usize
}

/// Uniform integer in `lo..=hi`.
pub fn uniform_range(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    lo + uniform_inclusive(rng, hi - lo)
}

/// Uniform real in `[0, 1)` from the top 53 bits of one word.
pub fn unit_f64(rng: &mut Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
