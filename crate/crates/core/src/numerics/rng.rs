//! Seeded, splittable random streams.
//!
//! A stream is a ChaCha8 keystream keyed by `seed` and addressed by a 64-bit
//! `stream_id`; the cipher's block counter is the internal state. Streams with
//! different ids never overlap, so work split across streams gives the same
//! numbers in any execution order.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    core: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut core = ChaCha8Rng::seed_from_u64(seed);
        core.set_stream(stream_id);
        RngStream {
            seed,
            stream_id,
            core,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Number of 32-bit words consumed so far.
    pub fn position(&self) -> u128 {
        self.core.get_word_pos()
    }

    /// Child stream identified by `child`. Does not advance `self`.
    pub fn split(&self, child: u64) -> RngStream {
        RngStream::new(self.seed, derive_stream_id(self.stream_id, child))
    }

    pub fn uniform(&mut self) -> f64 {
        self.core.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.core.sample(StandardNormal)
    }

    pub fn fill_gaussian(&mut self, out: &mut [f64], sigma: f64) {
        if sigma == 0.0 {
            out.fill(0.0);
            return;
        }
        for v in out.iter_mut() {
            *v = sigma * self.standard_normal();
        }
    }

    /// Uniformly distributed point on the unit sphere in `dim` dimensions.
    pub fn unit_vector(&mut self, dim: usize) -> Vec<f64> {
        loop {
            let mut v = vec![0.0; dim];
            self.fill_gaussian(&mut v, 1.0);
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-300 {
                v.iter_mut().for_each(|a| *a /= norm);
                return v;
            }
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.core.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.core.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.core.fill_bytes(dst)
    }
}

// SplitMix64 finalizer
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn derive_stream_id(parent: u64, child: u64) -> u64 {
    mix64(mix64(parent.wrapping_add(0x9e37_79b9_7f4a_7c15)) ^ child)
}

/// `dim` independent `N(0, sigma^2)` draws.
pub fn sample_gaussian_vector(stream: &mut RngStream, dim: usize, sigma: f64) -> Result<Vec<f64>> {
    if dim == 0 {
        return Err(Error::domain("sample_gaussian_vector: dim must be at least 1"));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::domain(format!("sample_gaussian_vector: invalid sigma {sigma}")));
    }
    let mut out = vec![0.0; dim];
    stream.fill_gaussian(&mut out, sigma);
    Ok(out)
}
