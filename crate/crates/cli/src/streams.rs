//! Named random sub-streams derived from the run seed.
//!
//! Each `(seed, name, index)` triple keys its own ChaCha generator, so a
//! component's draws do not shift when another component draws more or less.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const INIT: &str = "init";
pub const BINARIZE: &str = "binarize";
pub const EPS: &str = "eps";
pub const SHUFFLE: &str = "shuffle";
pub const SPLIT: &str = "split";
pub const EVAL_BINARIZE: &str = "eval-binarize";
pub const EVAL_EPS: &str = "eval-eps";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedStreams {
    pub seed: u64,
}

/// FNV-1a; stable across builds and platforms, unlike `DefaultHasher`.
fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

impl SeedStreams {
    pub fn new(seed: u64) -> Self {
        SeedStreams { seed }
    }

    /// Generator for stream `name` at position `index` (usually the epoch).
    pub fn stream(&self, name: &str, index: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&fnv1a(name).to_le_bytes());
        key[16..24].copy_from_slice(&index.to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }
}
