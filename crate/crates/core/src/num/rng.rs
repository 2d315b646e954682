use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Deterministic family of independent RNG streams derived from one seed.
///
/// Each stream is keyed by a label such as `"model-init"` or
/// `"data/3/train/clean"`; adding a new consumer never shifts the values drawn
/// by an existing one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStreams {
    seed: u64,
}

impl SeedStreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn key(&self, label: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update((label.len() as u64).to_le_bytes());
        h.update(label.as_bytes());
        h.finalize().into()
    }

    pub fn stream(&self, label: &str) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.key(label))
    }

    /// A 64-bit seed for APIs that take a plain integer seed.
    pub fn derive_seed(&self, label: &str) -> u64 {
        let k = self.key(label);
        u64::from_le_bytes(k[..8].try_into().unwrap())
    }
}
