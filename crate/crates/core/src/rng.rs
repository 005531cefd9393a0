//! Seeded, platform-stable random number generation.
//!
//! Backed by ChaCha8, whose output stream is fixed by its specification and
//! identical on every platform. Child generators are derived from
//! `(seed, index)` with SplitMix64 so parallel work never shares a stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// SplitMix64 finaliser.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for sub-task `index`; depends only on this
    /// generator's seed, not on how much of its stream was consumed.
    pub fn child(&self, index: u64) -> Self {
        Self::new(splitmix64(self.seed ^ splitmix64(index.wrapping_add(1))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<X>(&mut self, xs: &mut [X]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    /// Mask of ones and zeros where each entry is zero with probability `p`.
    pub fn bernoulli_mask<T: Scalar>(&mut self, shape: &[usize], p: f64) -> Result<Tensor<T>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!(
                "drop probability must lie in [0, 1), got {p}"
            )));
        }
        Ok(Tensor::from_fn(shape, |_| {
            if self.uniform() < p {
                T::zero()
            } else {
                T::one()
            }
        }))
    }

    /// I.i.d. standard normal draws.
    pub fn gaussian<T: Scalar>(&mut self, shape: &[usize]) -> Tensor<T> {
        Tensor::from_fn(shape, |_| T::of(self.normal()))
    }

    pub fn uniform_tensor<T: Scalar>(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
        Tensor::from_fn(shape, |_| T::of(self.uniform_range(lo, hi)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_edge_cases() {
        let mut rng = SeededRng::new(1);
        let m: Tensor<f32> = rng.bernoulli_mask(&[3, 4], 0.0).unwrap();
        assert_eq!(m, Tensor::ones(&[3, 4]));
        assert!(rng.bernoulli_mask::<f32>(&[2], 1.0).is_err());
        assert!(rng.bernoulli_mask::<f32>(&[2], -0.1).is_err());
    }

    #[test]
    fn mask_zero_fraction_within_binomial_interval() {
        let mut rng = SeededRng::new(2);
        let m: Tensor<f32> = rng.bernoulli_mask(&[100_000], 0.5).unwrap();
        assert!(m.data().iter().all(|&x| x == 0.0 || x == 1.0));
        let zeros = m.data().iter().filter(|&&x| x == 0.0).count() as f64 / 1e5;
        assert!((0.495..=0.505).contains(&zeros), "{zeros}");
    }

    #[test]
    fn seeded_draws_repeat() {
        let a: Tensor<f32> = SeededRng::new(9).bernoulli_mask(&[64], 0.3).unwrap();
        let b: Tensor<f32> = SeededRng::new(9).bernoulli_mask(&[64], 0.3).unwrap();
        assert_eq!(a, b);
        let g1: Tensor<f32> = SeededRng::new(9).gaussian(&[2, 3]);
        let g2: Tensor<f32> = SeededRng::new(9).gaussian(&[2, 3]);
        assert_eq!(g1.len(), 6);
        assert_eq!(
            g1.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            g2.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn gaussian_moments() {
        let g: Tensor<f64> = SeededRng::new(4).gaussian(&[100_000]);
        let n = g.len() as f64;
        let mean = g.sum() / n;
        let var = g.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() <= 0.02, "{mean}");
        assert!((0.98..=1.02).contains(&var), "{var}");
    }

    #[test]
    fn children_are_stable_and_distinct() {
        let mut parent = SeededRng::new(7);
        let c0 = parent.child(0).next_u64();
        parent.next_u64();
        assert_eq!(parent.child(0).next_u64(), c0);
        assert_ne!(parent.child(1).next_u64(), c0);
    }
}
