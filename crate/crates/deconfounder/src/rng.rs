//! Deterministic, splittable random number streams.
//!
//! Every stochastic operation takes an [`RngStream`], which is a 64-bit
//! seed plus a path of substream labels. Deriving a child stream never
//! consumes state from the parent, so the draw sequence of any stream
//! depends only on `(seed, path)` and not on thread scheduling or the
//! order in which sibling streams are used.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub path: Vec<u64>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed, path: Vec::new() }
    }

    /// Child stream with one more path component. Independent of any
    /// draws taken from `self`.
    pub fn substream(&self, label: u64) -> Self {
        let mut path = self.path.clone();
        path.push(label);
        RngStream { seed: self.seed, path }
    }

    /// Child stream keyed by a name (FNV-1a hash of the label). Handy when
    /// substreams correspond to pipeline stages rather than loop indices.
    pub fn named(&self, label: &str) -> Self {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in label.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        self.substream(h)
    }

    /// Materialize the generator for this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut state = splitmix64(self.seed);
        for &label in &self.path {
            state = splitmix64(state ^ splitmix64(label.wrapping_add(0xa076_1d64_78bd_642f)));
        }
        let mut key = [0u8; 32];
        let mut s = state;
        for chunk in key.chunks_mut(8) {
            s = splitmix64(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }
}
