//! Hierarchical seeding.
//!
//! Every tester invocation owns one [`RngTree`]. Each stage derives its own
//! child by label, so adding draws to one stage never shifts the stream seen
//! by another.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

pub type TestRng = ChaCha20Rng;

#[derive(Clone, Debug)]
pub struct RngTree {
    key: [u8; 32],
    path: String,
}

impl RngTree {
    pub fn new(seed: u64) -> Self {
        let mut h = Sha256::new();
        h.update(b"disttest/1");
        h.update(seed.to_le_bytes());
        RngTree {
            key: h.finalize().into(),
            path: String::new(),
        }
    }

    pub fn child(&self, label: &str) -> Self {
        let mut h = Sha256::new();
        h.update(self.key);
        h.update((label.len() as u64).to_le_bytes());
        h.update(label.as_bytes());
        let path = if self.path.is_empty() {
            label.to_string()
        } else {
            format!("{}/{}", self.path, label)
        };
        RngTree {
            key: h.finalize().into(),
            path,
        }
    }

    /// Indexed child, used for per-trial streams in Monte-Carlo loops.
    pub fn nth(&self, index: u64) -> Self {
        self.child(&format!("#{index}"))
    }

    pub fn rng(&self) -> TestRng {
        ChaCha20Rng::from_seed(self.key)
    }

    pub fn path(&self) -> &str {
        &self.path
    }
}
