//! Addressable Gaussian noise.
//!
//! Every random vector used during sampling is a pure function of
//! `(master seed, stream id, time index)`, so two samplers that agree on
//! stream ids consume identical noise no matter in which order they run.

use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Order-sensitive hash of a few words.
pub fn mix(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x243f_6a88_85a3_08d3, |h, &w| splitmix(h ^ splitmix(w)))
}

/// A fresh stream id derived from a parent stream.
pub fn child_stream(parent: u64, salt: u64) -> u64 {
    mix(&[parent, salt, 0x5eed])
}

/// Fills a vector with standard normal draws.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseStreams {
    pub master: u64,
    pub dim: usize,
}

impl NoiseStreams {
    pub fn new(master: u64, dim: usize) -> Self {
        Self { master, dim }
    }

    /// The noise vector consumed at time `t` on `stream`; `t = 0` is reserved
    /// for the initial latent `z_T`.
    pub fn normal(&self, stream: u64, t: usize) -> Vec<f64> {
        let mut rng = self.rng(stream, t as u64);
        standard_normal(&mut rng, self.dim)
    }

    /// Noises for a `k`-step macro step starting at `t`, ordered `t, t-1, ..`.
    pub fn macro_noises(&self, stream: u64, t: usize, k: usize) -> Vec<Vec<f64>> {
        (0..k).map(|i| self.normal(stream, t - i)).collect()
    }

    /// General-purpose generator for draws other than latent noise.
    pub fn rng(&self, stream: u64, tag: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix(&[self.master, stream, tag]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_is_addressable() {
        let s = NoiseStreams::new(7, 5);
        assert_eq!(s.normal(3, 10), s.normal(3, 10));
        assert_ne!(s.normal(3, 10), s.normal(3, 9));
        assert_ne!(s.normal(3, 10), s.normal(4, 10));
        assert_ne!(s.normal(3, 10), NoiseStreams::new(8, 5).normal(3, 10));
    }

    #[test]
    fn macro_noises_run_backwards_in_time() {
        let s = NoiseStreams::new(1, 3);
        let ns = s.macro_noises(2, 20, 4);
        for (i, n) in ns.iter().enumerate() {
            assert_eq!(*n, s.normal(2, 20 - i));
        }
    }

    #[test]
    fn child_streams_differ() {
        assert_ne!(child_stream(1, 0), child_stream(1, 1));
        assert_ne!(child_stream(1, 0), child_stream(2, 0));
        assert_ne!(child_stream(1, 0), 1);
    }
}
