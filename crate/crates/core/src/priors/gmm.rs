use serde::{Deserialize, Serialize};

use super::Denoiser;
use crate::error::{Error, Result};
use crate::volume::Volume3D;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

/// Per-voxel Gaussian-mixture prior on `x_0`. Under
/// `x_t = sqrt(ᾱ) x_0 + sqrt(1 − ᾱ) ε` its posterior mean is closed-form,
/// which makes it an exact Tweedie denoiser.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmScalarPrior {
    components: Vec<GmmComponent>,
}

impl GmmScalarPrior {
    /// Weights must be positive and sum to 1 within 1e-6; they are then
    /// renormalized exactly.
    pub fn new(mut components: Vec<GmmComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::param("GMM prior needs at least one component"));
        }
        for c in &components {
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(Error::param(format!("GMM weight must be > 0, got {}", c.weight)));
            }
            if !(c.std > 0.0 && c.std.is_finite()) {
                return Err(Error::param(format!("GMM std must be > 0, got {}", c.std)));
            }
            if !c.mean.is_finite() {
                return Err(Error::param("GMM mean must be finite"));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::param(format!("GMM weights sum to {total}, expected 1")));
        }
        for c in components.iter_mut() {
            c.weight /= total;
        }
        Ok(GmmScalarPrior { components })
    }

    pub fn from_triples(triples: &[(f64, f64, f64)]) -> Result<Self> {
        Self::new(
            triples
                .iter()
                .map(|&(weight, mean, std)| GmmComponent { weight, mean, std })
                .collect(),
        )
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }

    pub fn prior_mean(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.mean).sum()
    }

    /// Posterior mean `E[x_0 | x_t]` and its derivative in `x_t`.
    ///
    /// Per component the conjugate update gives
    /// `m_k = (√ᾱ s_k² x + (1−ᾱ) μ_k) / V_k` with `V_k = ᾱ s_k² + 1 − ᾱ`,
    /// weighted by responsibilities `w_k ∝ π_k N(x; √ᾱ μ_k, V_k)`. The
    /// derivative is `Σ w_k c_k + Σ w_k m_k (g_k − ḡ)` with
    /// `c_k = √ᾱ s_k² / V_k` and `g_k = −(x − √ᾱ μ_k) / V_k`.
    pub fn posterior(&self, x: f64, alpha_bar: f64) -> (f64, f64) {
        let sa = alpha_bar.sqrt();
        let noise_var = 1.0 - alpha_bar;
        let k = self.components.len();
        let mut logits = [0.0f64; 16];
        let mut heap;
        let logits: &mut [f64] = if k <= 16 {
            &mut logits[..k]
        } else {
            heap = vec![0.0; k];
            &mut heap
        };
        let mut max_logit = f64::NEG_INFINITY;
        for (l, c) in logits.iter_mut().zip(&self.components) {
            let var = alpha_bar * c.std * c.std + noise_var;
            let d = x - sa * c.mean;
            *l = c.weight.ln() - 0.5 * var.ln() - 0.5 * d * d / var;
            max_logit = max_logit.max(*l);
        }
        let mut norm = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - max_logit).exp();
            norm += *l;
        }
        let (mut mean, mut slope, mut g_bar, mut mg) = (0.0, 0.0, 0.0, 0.0);
        for (r, c) in logits.iter().zip(&self.components) {
            let w = r / norm;
            let s2 = c.std * c.std;
            let var = alpha_bar * s2 + noise_var;
            let m = (sa * s2 * x + noise_var * c.mean) / var;
            let g = -(x - sa * c.mean) / var;
            mean += w * m;
            slope += w * sa * s2 / var;
            g_bar += w * g;
            mg += w * m * g;
        }
        (mean, slope + mg - mean * g_bar)
    }

    pub fn posterior_mean(&self, x: f64, alpha_bar: f64) -> f64 {
        self.posterior(x, alpha_bar).0
    }

    pub fn posterior_mean_derivative(&self, x: f64, alpha_bar: f64) -> f64 {
        self.posterior(x, alpha_bar).1
    }
}

fn check_alpha(alpha_bar: f64) -> Result<()> {
    if !(alpha_bar > 0.0 && alpha_bar <= 1.0) {
        return Err(Error::param(format!("alpha_bar must lie in (0, 1], got {alpha_bar}")));
    }
    Ok(())
}

impl Denoiser for GmmScalarPrior {
    fn denoise(&self, x: &Volume3D, alpha_bar: f64) -> Result<Volume3D> {
        check_alpha(alpha_bar)?;
        Ok(x.map(|v| self.posterior_mean(v, alpha_bar)))
    }

    fn input_vjp(&self, x: &Volume3D, alpha_bar: f64, cotangent: &Volume3D) -> Result<Volume3D> {
        check_alpha(alpha_bar)?;
        x.zip_map(cotangent, |v, c| c * self.posterior_mean_derivative(v, alpha_bar))
    }

    fn denoise_and_vjp(
        &self,
        x: &Volume3D,
        alpha_bar: f64,
        cotangent_of: &mut dyn FnMut(&Volume3D) -> Result<Volume3D>,
    ) -> Result<(Volume3D, Volume3D)> {
        check_alpha(alpha_bar)?;
        let (means, slopes): (Vec<f64>, Vec<f64>) = x
            .data()
            .iter()
            .map(|&v| self.posterior(v, alpha_bar))
            .unzip();
        let out = Volume3D::from_vec(x.nx(), x.ny(), x.nz(), means)?;
        let cot = cotangent_of(&out)?;
        out.check_same_dims(&cot)?;
        let grad = cot
            .data()
            .iter()
            .zip(&slopes)
            .map(|(c, s)| c * s)
            .collect();
        Ok((out, x.with_data(grad)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::GaussianStream;

    #[test]
    fn single_component_closed_form() {
        let p = GmmScalarPrior::from_triples(&[(1.0, 0.0, 1.0)]).unwrap();
        let (m, d) = p.posterior(1.0, 0.5);
        assert!((m - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((m - 0.70711).abs() < 1e-5);
        // linear posterior mean: slope independent of x
        for x in [-3.0, 0.0, 2.5] {
            let d2 = p.posterior_mean_derivative(x, 0.5);
            assert!((d2 - d).abs() < 1e-15);
            assert!((d - 0.5f64.sqrt() / (0.5 + 0.5)).abs() < 1e-15);
        }
    }

    #[test]
    fn noiseless_limit_is_identity() {
        let p = GmmScalarPrior::from_triples(&[(0.3, 0.0, 0.1), (0.7, 1.0, 0.2)]).unwrap();
        for x in [-0.5, 0.2, 0.5, 1.3] {
            assert!((p.posterior_mean(x, 1.0) - x).abs() < 1e-12);
            assert!((p.posterior_mean(x, 1.0 - 1e-12) - x).abs() < 1e-6);
        }
    }

    #[test]
    fn pure_noise_limit_is_prior_mean() {
        let p = GmmScalarPrior::from_triples(&[(0.2, 0.0, 0.05), (0.5, 0.2, 0.05), (0.3, 1.0, 0.1)]).unwrap();
        for x in [-3.0, -1.0, 0.0, 0.7, 2.0, 4.0] {
            assert!((p.posterior_mean(x, 1e-8) - p.prior_mean()).abs() <= 1e-4);
        }
    }

    #[test]
    fn saturated_responsibility() {
        let p = GmmScalarPrior::from_triples(&[(0.5, -10.0, 0.5), (0.5, 10.0, 0.5)]).unwrap();
        let a: f64 = 0.81;
        let x = 9.5;
        let var = a * 0.25 + (1.0 - a);
        let m_hi = (a.sqrt() * 0.25 * x + (1.0 - a) * 10.0) / var;
        assert!((p.posterior_mean(x, a) - m_hi).abs() <= 1e-6);
    }

    #[test]
    fn derivative_matches_central_differences() {
        let p = GmmScalarPrior::from_triples(&[(0.25, 0.0, 0.05), (0.45, 0.2, 0.04), (0.3, 1.0, 0.1)]).unwrap();
        let mut g = GaussianStream::new(21);
        let h = 1e-5;
        for _ in 0..50 {
            let a = 0.05 + 0.9 * g.next_uniform();
            let x = a.sqrt() * (1.2 * g.next_uniform() - 0.1) + (1.0 - a).sqrt() * g.next_gaussian();
            let fd = (p.posterior_mean(x + h, a) - p.posterior_mean(x - h, a)) / (2.0 * h);
            let an = p.posterior_mean_derivative(x, a);
            let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-300);
            assert!(rel <= 1e-6, "x={x} a={a} fd={fd} an={an}");
        }
    }

    #[test]
    fn derivative_is_posterior_variance_scaled() {
        // dE[x0|x]/dx = sqrt(a) Var[x0|x] / (1 - a) >= 0; the variance is
        // computed here directly from the component moments
        let p = GmmScalarPrior::from_triples(&[(0.4, 0.1, 0.05), (0.6, 0.8, 0.2)]).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..=400 {
            for a in [0.01, 0.2, 0.5, 0.9, 0.999] {
                let x = -2.0 + i as f64 * 0.01;
                let sa = f64::sqrt(a);
                let mut w = vec![];
                let mut moments = vec![];
                for c in p.components() {
                    let var = a * c.std * c.std + 1.0 - a;
                    let d = x - sa * c.mean;
                    w.push(c.weight * (-0.5 * d * d / var).exp() / var.sqrt());
                    let m = (sa * c.std * c.std * x + (1.0 - a) * c.mean) / var;
                    let post_var = c.std * c.std * (1.0 - a) / var;
                    moments.push((m, post_var + m * m));
                }
                let z: f64 = w.iter().sum();
                let mean: f64 = w.iter().zip(&moments).map(|(w, m)| w * m.0).sum::<f64>() / z;
                let second: f64 = w.iter().zip(&moments).map(|(w, m)| w * m.1).sum::<f64>() / z;
                let expected = sa * (second - mean * mean) / (1.0 - a);
                let d = p.posterior_mean_derivative(x, a);
                assert!(d > 0.0 && d.is_finite());
                assert!(d < 1.0 / sa + 10.0);
                worst = worst.max((d - expected).abs() / expected.abs().max(1e-12));
            }
        }
        assert!(worst < 1e-7, "worst relative gap {worst}");
    }

    #[test]
    fn rejects_invalid_priors() {
        assert!(GmmScalarPrior::from_triples(&[]).is_err());
        assert!(GmmScalarPrior::from_triples(&[(0.5, 0.0, 1.0)]).is_err());
        assert!(GmmScalarPrior::from_triples(&[(1.0, 0.0, 0.0)]).is_err());
        assert!(GmmScalarPrior::from_triples(&[(1.2, 0.0, 1.0), (-0.2, 0.0, 1.0)]).is_err());
    }

    #[test]
    fn volume_vjp_matches_scalar_derivative() {
        let p = GmmScalarPrior::from_triples(&[(0.5, 0.0, 0.1), (0.5, 1.0, 0.1)]).unwrap();
        let mut g = GaussianStream::new(2);
        let x = Volume3D::from_fn(3, 3, 2, |_, _, _| g.next_gaussian());
        let cot = Volume3D::from_fn(3, 3, 2, |_, _, _| g.next_gaussian());
        let vjp = p.input_vjp(&x, 0.4, &cot).unwrap();
        let (out, fused) = p.denoise_and_vjp(&x, 0.4, &mut |_| Ok(cot.clone())).unwrap();
        assert_eq!(out, p.denoise(&x, 0.4).unwrap());
        assert_eq!(fused, vjp);
        for i in 0..x.len() {
            let expected = cot.data()[i] * p.posterior_mean_derivative(x.data()[i], 0.4);
            assert_eq!(vjp.data()[i], expected);
        }
    }
}
