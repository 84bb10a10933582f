//! Seeded, forkable randomness. Every random draw in a simulation flows
//! through a `SimRng` derived from the run seed by a label path, so streams
//! are reproducible and independent of evaluation order.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest as _, Sha256};

#[derive(Clone, Debug)]
pub struct SimRng {
    seed: u64,
    key: [u8; 32],
    inner: ChaCha20Rng,
}

impl SimRng {
    pub fn new(seed: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"fldeco/rng/root");
        hasher.update(seed.to_be_bytes());
        Self::from_key(seed, hasher.finalize().into())
    }

    fn from_key(seed: u64, key: [u8; 32]) -> Self {
        SimRng {
            seed,
            key,
            inner: ChaCha20Rng::from_seed(key),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives a child stream. The child depends only on this stream's
    /// origin (seed and fork path) and `label`, never on how many values
    /// the parent has already produced.
    pub fn fork(&self, label: &str) -> SimRng {
        let mut hasher = Sha256::new();
        hasher.update(self.key);
        hasher.update((label.len() as u32).to_be_bytes());
        hasher.update(label.as_bytes());
        Self::from_key(self.seed, hasher.finalize().into())
    }

    pub fn next_u128(&mut self) -> u128 {
        ((self.next_u64() as u128) << 64) | self.next_u64() as u128
    }
}

impl RngCore for SimRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
