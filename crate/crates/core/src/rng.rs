//! Counter-based noise streams.
//!
//! Every Gaussian draw used during sampling is addressed by a [`NoiseKey`].
//! The key is hashed into a ChaCha8 seed, so the same key always yields the
//! same draw no matter which sampler asks for it or in what order. This is
//! what lets the shared-prefix tree sampler and the naive per-leaf replay
//! agree bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Address of one noise draw.
///
/// `path` holds the branch bits of the node the edge leads into (first
/// branch is the most significant bit). `layer` is the tree layer of that
/// node; samplers without a tree use the grid step index plus one. Layer 0
/// is reserved for the initial noise of the trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseKey {
    pub iteration: u64,
    pub prompt: u64,
    pub tree: u64,
    pub path: u64,
    pub layer: u64,
}

impl NoiseKey {
    pub fn initial(iteration: u64, prompt: u64, tree: u64) -> Self {
        Self {
            iteration,
            prompt,
            tree,
            path: 0,
            layer: 0,
        }
    }
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic normal sampler keyed by [`NoiseKey`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseStream {
    pub seed: u64,
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn seed_for(&self, key: &NoiseKey) -> [u8; 32] {
        let mut h = splitmix64(self.seed);
        let mut out = [0u8; 32];
        for (i, field) in [key.iteration, key.prompt, key.tree, key.path, key.layer]
            .into_iter()
            .enumerate()
        {
            h = splitmix64(h ^ field.wrapping_mul(0xA076_1D64_78BD_642F).wrapping_add(i as u64));
        }
        for chunk in out.chunks_mut(8) {
            h = splitmix64(h);
            chunk.copy_from_slice(&h.to_le_bytes());
        }
        out
    }

    /// Standard normal vector of length `dim` for `key`.
    pub fn normal(&self, key: &NoiseKey, dim: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::from_seed(self.seed_for(key));
        (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
    }
}

/// Seeded general-purpose generator for data, batches and initialization.
pub fn seeded(seed: u64, purpose: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(purpose)))
}
