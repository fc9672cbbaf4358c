//! Reproducible Gaussian streams.
//!
//! The generator is xoshiro256++ whose 256-bit state is filled from the
//! 64-bit seed by splitmix64. Uniforms take the top 53 bits of each draw.
//! Gaussians come from Box-Muller in pairs: for uniforms `(u1, u2)` with
//! `u1` mapped to `(0, 1]`, the stream yields `r cos(2πu2)` then `r sin(2πu2)`
//! where `r = sqrt(-2 ln u1)`.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

#[derive(Clone, Debug)]
pub struct GaussianStream {
    rng: Xoshiro256PlusPlus,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64) -> Self {
        GaussianStream {
            rng: Xoshiro256PlusPlus::seed_from_u64(seed),
            spare: None,
        }
    }

    /// Uniform in `[0, 1)`.
    pub fn next_uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n` by rejection-free multiply-shift.
    pub fn next_index(&mut self, n: usize) -> usize {
        ((self.rng.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.next_uniform();
        let u2 = self.next_uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn fill_gaussian(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.next_gaussian();
        }
    }

    pub fn gaussian_vec(&mut self, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        self.fill_gaussian(&mut v);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let a = GaussianStream::new(42).gaussian_vec(1000);
        let b = GaussianStream::new(42).gaussian_vec(1000);
        assert_eq!(a, b);
        let c = GaussianStream::new(43).gaussian_vec(1000);
        assert_ne!(a, c);
    }

    #[test]
    fn moments() {
        let v = GaussianStream::new(0).gaussian_vec(1_000_000);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 0.01);
        assert!((var - 1.0).abs() < 0.01);
    }

    #[test]
    fn uniform_range() {
        let mut g = GaussianStream::new(9);
        for _ in 0..10_000 {
            let u = g.next_uniform();
            assert!((0.0..1.0).contains(&u));
            assert!(g.next_index(7) < 7);
        }
    }
}
