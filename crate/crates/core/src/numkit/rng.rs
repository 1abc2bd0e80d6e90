//! Seeded random streams addressed by a path of integers, so that any
//! draw in a simulated trial can be regenerated without replaying the
//! draws that came before it.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::linalg::{cholesky_psd, Matrix};
use crate::error::{Error, Result};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// One round of the SplitMix64 output function.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and an index.
#[inline]
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ splitmix64(index.wrapping_mul(GOLDEN).wrapping_add(1)))
}

/// Deterministic stream keyed by `(master_seed, stream_path)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    path: Vec<u64>,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, path: &[u64]) -> Self {
        let mut h = splitmix64(master_seed);
        for (depth, &p) in path.iter().enumerate() {
            h = mix_seed(h, p ^ ((depth as u64 + 1) << 56));
        }
        let mut seed = [0u8; 32];
        let mut s = h;
        for chunk in seed.chunks_mut(8) {
            s = splitmix64(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        RngStream {
            master_seed,
            path: path.to_vec(),
            inner: ChaCha8Rng::from_seed(seed),
        }
    }

    /// Fresh stream one level deeper; independent of how much of `self`
    /// has been consumed.
    pub fn child(&self, index: u64) -> Self {
        let mut path = self.path.clone();
        path.push(index);
        RngStream::new(self.master_seed, &path)
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn path(&self) -> &[u64] {
        &self.path
    }

    /// Uniform on [0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int_range(&mut self, lo: u64, hi: u64) -> u64 {
        use rand::Rng;
        self.inner.random_range(lo..=hi)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}

impl RngCore for RngStream {
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

/// Multivariate normal sampler with a precomputed factor.
#[derive(Debug, Clone)]
pub struct MvnSampler {
    mean: Vec<f64>,
    factor: Matrix,
}

impl MvnSampler {
    pub fn new(mean: &[f64], covariance: &Matrix) -> Result<Self> {
        let n = mean.len();
        if covariance.nrows() != n || covariance.ncols() != n {
            return Err(Error::invalid(format!(
                "covariance must be {n}x{n}, got {}x{}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        if !covariance.is_finite() || !covariance.is_symmetric(1e-12) {
            return Err(Error::invalid("covariance must be finite and symmetric"));
        }
        Ok(MvnSampler {
            mean: mean.to_vec(),
            factor: cholesky_psd(covariance, 1e-12)?,
        })
    }

    pub fn sample(&self, rng: &mut RngStream) -> Vec<f64> {
        let n = self.mean.len();
        let z: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        (0..n)
            .map(|i| {
                let shift: f64 = (0..=i).map(|k| self.factor[(i, k)] * z[k]).sum();
                if shift == 0.0 {
                    self.mean[i]
                } else {
                    self.mean[i] + shift
                }
            })
            .collect()
    }
}

/// One draw from N(mean, covariance).
pub fn mvn_sample(rng: &mut RngStream, mean: &[f64], covariance: &Matrix) -> Result<Vec<f64>> {
    Ok(MvnSampler::new(mean, covariance)?.sample(rng))
}
