//! Seedable, portable random sampling.
//!
//! The generator is ChaCha8 keyed by a u64 seed. Normal variates come from
//! the Box-Muller transform of two uniform draws, so the stream is a pure
//! function of the seed and the draw sequence — no platform library normals
//! and no rejection steps.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub struct PortableRng {
    inner: ChaCha8Rng,
}

impl PortableRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller; consumes exactly two uniforms.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform(); // (0, 1]: keeps ln finite
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Uniform index in [0, n) by the widening-multiply map.
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.inner.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Draw from Categorical(weights) by inverse CDF; `weights` must be a
    /// simplex. Returns a 0-based index.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let u = self.uniform();
        let mut cum = 0.0;
        for (i, &w) in weights.iter().enumerate() {
            cum += w;
            if u < cum {
                return i;
            }
        }
        weights.len() - 1
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        for i in (1..slice.len()).rev() {
            let j = self.index(i + 1);
            slice.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = PortableRng::new(99);
        let mut b = PortableRng::new(99);
        for _ in 0..100 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut rng = PortableRng::new(1);
        for _ in 0..10_000 {
            let u = rng.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn normal_moments() {
        let mut rng = PortableRng::new(7);
        let n = 200_000;
        let samples: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn categorical_degenerate_and_frequencies() {
        let mut rng = PortableRng::new(3);
        for _ in 0..100 {
            assert_eq!(rng.categorical(&[1.0, 0.0]), 0);
        }
        let w = [0.2, 0.5, 0.3];
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[rng.categorical(&w)] += 1;
        }
        for (c, &p) in counts.iter().zip(&w) {
            let freq = *c as f64 / n as f64;
            let bound = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
            assert!((freq - p).abs() < bound, "freq {freq} vs {p}");
        }
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = PortableRng::new(5);
        let mut v: Vec<usize> = (0..50).collect();
        rng.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }
}
