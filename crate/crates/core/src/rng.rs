//! The single seedable generator used for initialization, data sampling and
//! generation.
//!
//! The generator is ChaCha8 seeded through `SeedableRng::seed_from_u64`.
//! Every derived quantity is defined on top of `next_u64` so sequences can
//! be reproduced by any implementation of the same stream:
//!
//! - `uniform01() = (next_u64() >> 11) * 2^-53`, a value in `[0, 1)`.
//! - `categorical(p)` draws `u = uniform01()` and returns the first index `i`
//!   whose running sum `p[0] + ... + p[i]` (accumulated in `f64`) exceeds
//!   `u * sum(p)`. If rounding leaves no such index, the last index with
//!   nonzero probability is returned.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Rng64 {
    inner: ChaCha8Rng,
}

impl Rng64 {
    pub fn new(seed: u64) -> Self {
        Rng64 {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream for the same seed.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng64 { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform01(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform01()
    }

    /// Integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        ((self.uniform01() * n as f64) as usize).min(n - 1)
    }

    /// Inverse-CDF draw from unnormalized non-negative weights.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let total: f64 = probs.iter().sum();
        let u = self.uniform01() * total;
        let mut acc = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            if acc > u {
                return i;
            }
        }
        probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
    }
}
