//! Noise schedule, Tweedie conversions, and the denoising priors `f_θ`.

mod conv;
mod gmm;
mod schedule;
mod train;

pub use conv::{ConvCache, ConvDenoiser, CONV_CHANNELS, CONV_KERNEL};
pub use gmm::{GmmComponent, GmmScalarPrior};
pub use schedule::NoiseSchedule;
pub use train::{train_denoiser, TrainConfig, TrainReport};

use crate::error::{Error, Result};
use crate::volume::Volume3D;

/// A denoiser `f_θ(x_t) ≈ E[x_0 | x_t]` together with its input
/// vector-Jacobian product. Implementations act on each axial slice (or
/// voxel) independently.
pub trait Denoiser {
    fn denoise(&self, x: &Volume3D, alpha_bar: f64) -> Result<Volume3D>;

    /// Gradient of `⟨cotangent, f(x)⟩` with respect to `x`.
    fn input_vjp(&self, x: &Volume3D, alpha_bar: f64, cotangent: &Volume3D) -> Result<Volume3D>;

    /// Evaluates `f(x)`, asks `cotangent_of` for the output cotangent, and
    /// returns `(f(x), Jᵀ cotangent)`. Override to share work between the
    /// two passes.
    fn denoise_and_vjp(
        &self,
        x: &Volume3D,
        alpha_bar: f64,
        cotangent_of: &mut dyn FnMut(&Volume3D) -> Result<Volume3D>,
    ) -> Result<(Volume3D, Volume3D)> {
        let out = self.denoise(x, alpha_bar)?;
        let cot = cotangent_of(&out)?;
        let grad = self.input_vjp(x, alpha_bar, &cot)?;
        Ok((out, grad))
    }
}

/// `f(x) = x`; turns the samplers into plain convex solvers.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityDenoiser;

impl Denoiser for IdentityDenoiser {
    fn denoise(&self, x: &Volume3D, _alpha_bar: f64) -> Result<Volume3D> {
        Ok(x.clone())
    }

    fn input_vjp(&self, x: &Volume3D, _alpha_bar: f64, cotangent: &Volume3D) -> Result<Volume3D> {
        x.check_same_dims(cotangent)?;
        Ok(cotangent.clone())
    }
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn denoise(&self, x: &Volume3D, alpha_bar: f64) -> Result<Volume3D> {
        (**self).denoise(x, alpha_bar)
    }

    fn input_vjp(&self, x: &Volume3D, alpha_bar: f64, cotangent: &Volume3D) -> Result<Volume3D> {
        (**self).input_vjp(x, alpha_bar, cotangent)
    }

    fn denoise_and_vjp(
        &self,
        x: &Volume3D,
        alpha_bar: f64,
        cotangent_of: &mut dyn FnMut(&Volume3D) -> Result<Volume3D>,
    ) -> Result<(Volume3D, Volume3D)> {
        (**self).denoise_and_vjp(x, alpha_bar, cotangent_of)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn denoise(&self, x: &Volume3D, alpha_bar: f64) -> Result<Volume3D> {
        (**self).denoise(x, alpha_bar)
    }

    fn input_vjp(&self, x: &Volume3D, alpha_bar: f64, cotangent: &Volume3D) -> Result<Volume3D> {
        (**self).input_vjp(x, alpha_bar, cotangent)
    }

    fn denoise_and_vjp(
        &self,
        x: &Volume3D,
        alpha_bar: f64,
        cotangent_of: &mut dyn FnMut(&Volume3D) -> Result<Volume3D>,
    ) -> Result<(Volume3D, Volume3D)> {
        (**self).denoise_and_vjp(x, alpha_bar, cotangent_of)
    }
}

/// Tweedie's estimate `(x_t − sqrt(1 − ᾱ) ε) / sqrt(ᾱ)`.
pub fn tweedie_denoise(x_t: &[f64], eps: &[f64], alpha_bar: f64) -> Result<Vec<f64>> {
    if !(alpha_bar > 0.0 && alpha_bar <= 1.0) {
        return Err(Error::param(format!(
            "Tweedie denoising needs 0 < alpha_bar <= 1, got {alpha_bar}"
        )));
    }
    if x_t.len() != eps.len() {
        return Err(Error::shape(x_t.len(), eps.len()));
    }
    let noise = (1.0 - alpha_bar).sqrt();
    let scale = alpha_bar.sqrt();
    Ok(x_t
        .iter()
        .zip(eps)
        .map(|(x, e)| (x - noise * e) / scale)
        .collect())
}

/// Inverse of [`tweedie_denoise`]: `(x_t − sqrt(ᾱ) x̂₀) / sqrt(1 − ᾱ)`.
pub fn eps_from_denoiser(x_t: &[f64], x0: &[f64], alpha_bar: f64) -> Result<Vec<f64>> {
    if !(alpha_bar > 0.0 && alpha_bar < 1.0) {
        return Err(Error::param(format!(
            "noise estimate needs 0 < alpha_bar < 1, got {alpha_bar}"
        )));
    }
    if x_t.len() != x0.len() {
        return Err(Error::shape(x_t.len(), x0.len()));
    }
    let noise = (1.0 - alpha_bar).sqrt();
    let scale = alpha_bar.sqrt();
    Ok(x_t
        .iter()
        .zip(x0)
        .map(|(x, d)| (x - scale * d) / noise)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::GaussianStream;

    #[test]
    fn tweedie_hand_values() {
        assert_eq!(tweedie_denoise(&[1.5, -2.0], &[7.0, 3.0], 1.0).unwrap(), vec![1.5, -2.0]);
        assert_eq!(tweedie_denoise(&[1.5, -2.0], &[0.0, 0.0], 0.25).unwrap(), vec![3.0, -4.0]);
        assert!(tweedie_denoise(&[1.0], &[0.0], 0.0).is_err());
    }

    #[test]
    fn eps_hand_values() {
        let a: f64 = 0.36;
        let x = [0.6];
        let e = eps_from_denoiser(&x, &[x[0] / a.sqrt()], a).unwrap();
        assert!(e[0].abs() < 1e-15);
        let e = eps_from_denoiser(&[1.0], &[1.0], 0.5).unwrap();
        let expected = (1.0 - 0.5f64.sqrt()) / 0.5f64.sqrt();
        assert!((e[0] - expected).abs() < 1e-15);
        assert!((e[0] - 0.41421).abs() < 1e-5);
        assert!(eps_from_denoiser(&[1.0], &[1.0], 1.0).is_err());
    }

    #[test]
    fn round_trip() {
        let mut g = GaussianStream::new(1);
        let schedule = NoiseSchedule::ddpm(1000).unwrap();
        for t in 1..=1000 {
            let a = schedule.alpha_bar(t);
            let x = g.gaussian_vec(4);
            let eps = g.gaussian_vec(4);
            let x0 = tweedie_denoise(&x, &eps, a).unwrap();
            let back = eps_from_denoiser(&x, &x0, a).unwrap();
            for (b, e) in back.iter().zip(&eps) {
                assert!((b - e).abs() <= 1e-12 * (1.0 + e.abs()), "t={t}");
            }
            let x0_back = tweedie_denoise(&x, &back, a).unwrap();
            for (p, q) in x0_back.iter().zip(&x0) {
                assert!((p - q).abs() <= 1e-12 * (1.0 + q.abs()));
            }
        }
    }
}
