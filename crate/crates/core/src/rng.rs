//! Seed derivation.
//!
//! Every random stream is keyed by `(root seed, step, sample, purpose)` and
//! mixed with the SplitMix64 finalizer, so the draws consumed at a given
//! step for a given sample never depend on how many draws other streams took.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds the counters into the root seed one word at a time.
pub fn derive_seed(root: u64, counters: &[u64]) -> u64 {
    counters.iter().fold(splitmix64(root), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

/// Named stream purposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    /// Which training sample a step uses.
    SampleOrder = 1,
    /// Per-image keep/alpha/beta draws.
    ImageDraws = 2,
    /// Per-pixel keep draws (pixel filter granularity).
    PixelKeep = 3,
    /// Per-pixel alpha/beta draws (pixel blend granularity).
    PixelBlend = 4,
    /// Uniform (-1, 1) perturbations for the random-noise permutation.
    PixelNoise = 5,
}

pub fn stream(root: u64, step: u64, sample: u64, purpose: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, &[step, sample, purpose as u64]))
}
