//! Seeded sampling.
//!
//! Every experiment sample draws from its own ChaCha20 stream: the 256-bit
//! key holds the 64-bit experiment seed in little-endian order in its first
//! eight bytes (the remaining bytes are zero), and the stream id is chosen
//! by the caller. Perturbation sweeps use the direction index, so every
//! magnitude is probed along the same set of directions. A uniform draw on `[0, 1)` is `(next_u64 >> 11) * 2^-53`.
//! The mapping is fully specified so that records can be reproduced by
//! other implementations, and samples are independent of evaluation order.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

#[derive(Debug, Clone)]
pub struct SampleRng {
    inner: ChaCha20Rng,
}

impl SampleRng {
    pub fn new(seed: u64, sample_index: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        let mut inner = ChaCha20Rng::from_seed(key);
        inner.set_stream(sample_index);
        Self { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n` (`n > 0`).
    pub fn index(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    /// Vector with independent entries uniform on `[-1, 1)`.
    pub fn symmetric_vec(&mut self, len: usize) -> Vec<f64> {
        (0..len).map(|_| self.uniform_in(-1.0, 1.0)).collect()
    }
}
