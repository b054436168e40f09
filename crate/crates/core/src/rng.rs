//! Seeded, replayable randomness.
//!
//! Every sampler is a ChaCha stream addressed by `(seed, stream)`; the word
//! position at each draw is recorded so an individual outcome can be replayed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

/// Coordinates of a single draw inside a seeded stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPath {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u128,
}

#[derive(Debug, Clone)]
pub struct Sampler {
    seed: u64,
    stream: u64,
    rng: ChaCha20Rng,
}

impl Sampler {
    pub fn new(seed: u64) -> Self {
        Self::substream(seed, 0)
    }

    /// Independent stream `stream` of the master seed.
    pub fn substream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Sampler { seed, stream, rng }
    }

    /// Replays a sampler positioned exactly at a recorded draw.
    pub fn replay(path: SeedPath) -> Self {
        let mut s = Self::substream(path.seed, path.stream);
        s.rng.set_word_pos(path.word_pos);
        s
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn path(&self) -> SeedPath {
        SeedPath { seed: self.seed, stream: self.stream, word_pos: self.rng.get_word_pos() }
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }

    /// Draws an index from unnormalized non-negative weights.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let target = self.uniform() * total;
        let mut acc = 0.0;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if target < acc {
                return i;
            }
        }
        // rounding can leave target == total; fall back to the last non-zero weight
        weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
    }
}

/// Precomputed cumulative table for drawing many samples from one distribution.
#[derive(Debug, Clone)]
pub struct CumulativeTable {
    cdf: Vec<f64>,
}

impl CumulativeTable {
    pub fn new(weights: &[f64]) -> Self {
        let mut acc = 0.0;
        let cdf = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        CumulativeTable { cdf }
    }

    pub fn sample(&self, sampler: &mut Sampler) -> usize {
        let total = *self.cdf.last().unwrap_or(&0.0);
        let target = sampler.uniform() * total;
        let idx = self.cdf.partition_point(|&c| c <= target);
        idx.min(self.cdf.len().saturating_sub(1))
    }
}
