//! Seeded random streams.
//!
//! Every random decision in the crate (cluster placement, splits, weight
//! initialization, episode sampling) draws from ChaCha8 (`rand_chacha`),
//! keyed by `ChaCha8Rng::seed_from_u64(seed)` and separated by the ChaCha
//! stream id. ChaCha output is specified bit-for-bit and independent of
//! platform endianness, so splits and trajectories are portable. A stream's
//! full position is `(seed, stream, word_pos)`, which is what checkpoints
//! store.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream ids used across the crate. Distinct purposes never share a stream,
/// so e.g. changing the batch size does not perturb exemplar draws.
pub mod purpose {
    pub const CLUSTERS: u64 = 1;
    pub const PROJECTION: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const INIT: u64 = 4;
    pub const EXEMPLARS: u64 = 10;
    pub const LABELED_BATCH: u64 = 11;
    pub const UNLABELED_BATCH: u64 = 12;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamState {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u128,
}

#[derive(Debug, Clone)]
pub struct SeededStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl SeededStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        SeededStream { seed, rng }
    }

    pub fn restore(state: StreamState) -> Self {
        let mut s = SeededStream::new(state.seed, state.stream);
        s.rng.set_word_pos(state.word_pos);
        s
    }

    pub fn state(&self) -> StreamState {
        StreamState { seed: self.seed, stream: self.rng.get_stream(), word_pos: self.rng.get_word_pos() }
    }

    /// Uniform index in `0..n`. `n` must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// SplitMix64 finalizer; derives independent child seeds (one per repeat of
/// a protocol, for instance) from a master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
