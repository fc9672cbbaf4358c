use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cumulative signal retention `ᾱ_t` for `t = 0..=T` (with `ᾱ_0 = 1`) and
/// the strictly decreasing sub-schedule visited by a sampler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
    steps: Vec<usize>,
}

impl NoiseSchedule {
    /// Linear betas from `beta_start` to `beta_end` over `t_max` steps, with
    /// `n_steps` sampling times `t_i = floor(i * T / N)` for `i = N..1`.
    pub fn linear(t_max: usize, beta_start: f64, beta_end: f64, n_steps: usize) -> Result<Self> {
        if t_max == 0 {
            return Err(Error::param("diffusion length T must be >= 1"));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::param(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let mut alpha_bar = Vec::with_capacity(t_max + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for s in 0..t_max {
            let frac = if t_max == 1 {
                0.0
            } else {
                s as f64 / (t_max - 1) as f64
            };
            let beta = beta_start + (beta_end - beta_start) * frac;
            acc *= 1.0 - beta;
            alpha_bar.push(acc);
        }
        Self::from_alpha_bar(alpha_bar, uniform_steps(t_max, n_steps)?)
    }

    /// Standard DDPM schedule: `T = 1000`, betas `1e-4 .. 0.02`.
    pub fn ddpm(n_steps: usize) -> Result<Self> {
        Self::linear(1000, 1e-4, 0.02, n_steps)
    }

    pub fn from_alpha_bar(alpha_bar: Vec<f64>, steps: Vec<usize>) -> Result<Self> {
        if alpha_bar.len() < 2 || alpha_bar[0] != 1.0 {
            return Err(Error::param("alpha_bar must start at 1 and cover t >= 1"));
        }
        if alpha_bar.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return Err(Error::param("alpha_bar values must lie in (0, 1]"));
        }
        if alpha_bar.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::param("alpha_bar must be strictly decreasing"));
        }
        let t_max = alpha_bar.len() - 1;
        if steps.is_empty() || steps.len() > t_max {
            return Err(Error::param(format!(
                "need 1..={t_max} sampling steps, got {}",
                steps.len()
            )));
        }
        if steps.windows(2).any(|w| w[1] >= w[0]) || steps.iter().any(|&t| t == 0 || t > t_max) {
            return Err(Error::param("sampling steps must be strictly decreasing within [1, T]"));
        }
        Ok(NoiseSchedule { alpha_bar, steps })
    }

    pub fn with_steps(&self, n_steps: usize) -> Result<Self> {
        Self::from_alpha_bar(self.alpha_bar.clone(), uniform_steps(self.t_max(), n_steps)?)
    }

    pub fn t_max(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Sampling times `t_N > ... > t_1`.
    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    /// The time the sampler moves to after step `i`; 0 after the last step.
    pub fn prev_time(&self, i: usize) -> usize {
        self.steps.get(i + 1).copied().unwrap_or(0)
    }
}

fn uniform_steps(t_max: usize, n: usize) -> Result<Vec<usize>> {
    if n == 0 || n > t_max {
        return Err(Error::param(format!("need 1..={t_max} sampling steps, got {n}")));
    }
    Ok((1..=n).rev().map(|i| i * t_max / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ddpm_schedule_shape() {
        let s = NoiseSchedule::ddpm(30).unwrap();
        assert_eq!(s.t_max(), 1000);
        assert_eq!(s.alpha_bar(0), 1.0);
        assert!((s.alpha_bar(1) - (1.0 - 1e-4)).abs() < 1e-15);
        assert!(s.alpha_bar(1000) > 0.0 && s.alpha_bar(1000) < 1e-4);
        assert_eq!(s.steps().len(), 30);
        assert_eq!(s.steps()[0], 1000);
        assert_eq!(*s.steps().last().unwrap(), 33);
        assert_eq!(s.prev_time(29), 0);
        assert_eq!(s.prev_time(0), s.steps()[1]);
    }

    #[test]
    fn rejects_invalid() {
        assert!(NoiseSchedule::linear(10, 0.1, 0.05, 3).is_err());
        assert!(NoiseSchedule::ddpm(0).is_err());
        assert!(NoiseSchedule::ddpm(1001).is_err());
        assert!(NoiseSchedule::from_alpha_bar(vec![1.0, 0.5, 0.6], vec![2, 1]).is_err());
        assert!(NoiseSchedule::from_alpha_bar(vec![1.0, 0.5, 0.2], vec![1, 2]).is_err());
        assert!(NoiseSchedule::from_alpha_bar(vec![1.0, 0.5, 0.0], vec![2]).is_err());
    }

    proptest! {
        #[test]
        fn subsampling_preserves_monotonicity(n in 1usize..=1000) {
            let s = NoiseSchedule::ddpm(n).unwrap();
            prop_assert_eq!(s.steps().len(), n);
            for w in s.steps().windows(2) {
                prop_assert!(w[0] > w[1]);
                prop_assert!(s.alpha_bar(w[0]) < s.alpha_bar(w[1]));
            }
        }
    }
}
