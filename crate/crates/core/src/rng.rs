//! Named random substreams derived from one run seed.
//!
//! Each consumer asks for a stream by name; the stream seed is the SHA-256 of
//! the run seed and the name, so adding a new consumer never shifts the draws
//! of an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedStream {
    seed: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rng(&self, name: &str) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(name.as_bytes());
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    /// Child stream for an indexed sub-component, e.g. `("speaker", 3)`.
    pub fn child(&self, name: &str, index: u64) -> SeedStream {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(name.as_bytes());
        h.update(index.to_le_bytes());
        let d = h.finalize();
        let mut b = [0u8; 8];
        b.copy_from_slice(&d[..8]);
        SeedStream::new(u64::from_le_bytes(b))
    }
}
