//! Counter-based standard normal streams.
//!
//! Every stream is a ChaCha8 keystream addressed by `(seed, stream)`. Within a
//! stream the k-th 64-bit word is mapped to the open unit interval as
//! `((w >> 11) + 0.5) * 2^-53` and pushed through the AS241 normal quantile.
//! The output therefore depends only on `(seed, stream, position)`, never on
//! thread scheduling.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::normal;

const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

/// A deterministic stream of N(0, 1) deviates.
#[derive(Clone, Debug)]
pub struct NormalStream {
    rng: ChaCha8Rng,
}

impl NormalStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }

    /// Uniform deviate strictly inside (0, 1).
    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * TWO_POW_M53
    }

    #[inline]
    pub fn next_normal(&mut self) -> f64 {
        normal::ppf(self.next_uniform())
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.next_normal();
        }
    }
}

/// Seed for an auxiliary computation derived from a master seed and a tag,
/// via the SplitMix64 finalizer.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    let mut z = master ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
