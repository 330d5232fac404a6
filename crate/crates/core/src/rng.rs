//! Keyed random-number substreams.
//!
//! Every random quantity in a simulation is drawn from a generator whose seed is
//! a hash of `(master seed, trial index, purpose, index)`. A node's motion
//! therefore depends only on its own key, so trials, nodes and paths can be
//! evaluated in any order (or on any number of threads) with bit-identical
//! results.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

/// Generator used for every substream.
pub type StreamRng = Xoshiro256PlusPlus;

/// Purpose tags separating otherwise colliding substreams.
pub mod tag {
    pub const NODE: u64 = 0x6e6f_6465;
    pub const POINTS: u64 = 0x706f_696e;
    pub const TARGET: u64 = 0x7461_7267;
    pub const PATH: u64 = 0x7061_7468;
    pub const MARK: u64 = 0x6d61_726b;
    pub const COUPLING: u64 = 0x636f_7570;
    pub const BOOTSTRAP: u64 = 0x626f_6f74;
    pub const RESAMPLE: u64 = 0x7265_7361;
    pub const SAMPLE: u64 = 0x7361_6d70;
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a sequence of words into one 64-bit seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x243f_6a88_85a3_08d3u64, |acc, &p| mix64(acc ^ mix64(p)))
}

/// Identifies one trial of one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TrialKey {
    pub master: u64,
    pub trial: u64,
}

impl TrialKey {
    pub fn new(master: u64, trial: u64) -> Self {
        Self { master, trial }
    }

    /// Derived key for a sub-experiment sharing the same master seed.
    pub fn child(&self, tag: u64, index: u64) -> TrialKey {
        TrialKey {
            master: derive_seed(&[self.master, self.trial, tag, index]),
            trial: 0,
        }
    }

    /// Motion substream of node `id`.
    pub fn node_stream(&self, id: u64) -> StreamRng {
        StreamRng::seed_from_u64(derive_seed(&[self.master, self.trial, tag::NODE, id]))
    }

    /// Trial-level substream for a given purpose.
    pub fn stream(&self, purpose: u64) -> StreamRng {
        StreamRng::seed_from_u64(derive_seed(&[self.master, self.trial, purpose]))
    }

    /// Indexed substream for a given purpose (e.g. the i-th sausage path).
    pub fn indexed_stream(&self, purpose: u64, index: u64) -> StreamRng {
        StreamRng::seed_from_u64(derive_seed(&[self.master, self.trial, purpose, index]))
    }

    /// Counter-based uniform mark in [0, 1) for node `id`.
    pub fn mark(&self, id: u64) -> f64 {
        let bits = derive_seed(&[self.master, self.trial, tag::MARK, id]) >> 11;
        bits as f64 * (1.0 / (1u64 << 53) as f64)
    }
}
