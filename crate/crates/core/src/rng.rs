//! Seeded random streams.
//!
//! A run owns one [`RngStream`]. Every consumer asks for a sub-stream keyed by
//! `(index, purpose)`, so drawing more numbers in one place never shifts the
//! numbers seen anywhere else.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator type handed to environments and policies.
pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    /// Length of the advance phase.
    Advance = 0,
    /// Length of the estimator rollout.
    Horizon = 1,
    /// Action noise and environment transitions.
    Action = 2,
    /// Anything outside the learner loop (instance generators, test fixtures).
    Aux = 3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for `(index, purpose)`.
    pub fn substream(&self, index: u64, purpose: Purpose) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index.wrapping_mul(4).wrapping_add(purpose as u64));
        rng
    }

    /// Derived stream with its own seed, e.g. one per trial of a suite.
    pub fn child(&self, index: u64) -> RngStream {
        // splitmix64 finalizer
        let mut z = self.seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RngStream::new(z ^ (z >> 31))
    }
}
