//! Seeded randomness.
//!
//! Every randomized stage draws from a [`ChaCha8Rng`] seeded through
//! [`RandomSeed`]. Sub-seeds are derived by hashing the parent seed with a
//! label (SHA-256, first eight bytes little-endian), so streams are stable
//! across platforms and independent of scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RandomSeed(pub u64);

impl RandomSeed {
    pub fn new(seed: u64) -> Self {
        RandomSeed(seed)
    }

    pub fn value(self) -> u64 {
        self.0
    }

    /// Child seed for the stream identified by `label`.
    pub fn derive(self, label: &str) -> RandomSeed {
        let mut hasher = Sha256::new();
        hasher.update(self.0.to_le_bytes());
        hasher.update(label.as_bytes());
        let digest = hasher.finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        RandomSeed(u64::from_le_bytes(bytes))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

impl Default for RandomSeed {
    fn default() -> Self {
        RandomSeed(42)
    }
}
