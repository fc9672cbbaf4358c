use serde::Serialize;

use super::{ConvDenoiser, NoiseSchedule};
use crate::error::{Error, Result};
use crate::optim::{AdamConfig, AdamState};
use crate::rng::GaussianStream;
use crate::volume::Image2D;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Optimizer steps per training slice per epoch.
    pub steps_per_slice: usize,
    pub crop: usize,
    pub adam: AdamConfig,
    /// Fraction of slices held out for evaluation (at least one when more
    /// than one slice is given).
    pub held_out_fraction: f64,
    /// Noise draws per held-out slice.
    pub eval_draws: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            steps_per_slice: 8,
            crop: 16,
            adam: AdamConfig::with_lr(3e-3),
            held_out_fraction: 0.2,
            eval_draws: 16,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainReport {
    /// Per-step training loss (mean squared noise error on the crop).
    pub loss_history: Vec<f64>,
    pub held_out_loss: f64,
    /// Held-out loss of `ε̂ = sqrt(1 − ᾱ) x_t` on the same draws.
    pub baseline_loss: f64,
    pub n_train: usize,
    pub n_held_out: usize,
}

/// Trains a [`ConvDenoiser`] on `E‖ε − ε_θ(sqrt(ᾱ) x₀ + sqrt(1 − ᾱ) ε, t)‖²`
/// with random crops, times and noise drawn from the seeded stream.
pub fn train_denoiser(
    slices: &[Image2D],
    schedule: &NoiseSchedule,
    config: &TrainConfig,
) -> Result<(ConvDenoiser, TrainReport)> {
    if slices.is_empty() {
        return Err(Error::param("training set is empty"));
    }
    if config.crop == 0 {
        return Err(Error::param("crop size must be positive"));
    }
    if !(0.0..1.0).contains(&config.held_out_fraction) {
        return Err(Error::param("held_out_fraction must lie in [0, 1)"));
    }
    for s in slices {
        if s.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training slice".into()));
        }
    }
    let n_held = if slices.len() > 1 {
        ((slices.len() as f64 * config.held_out_fraction).ceil() as usize).clamp(1, slices.len() - 1)
    } else {
        0
    };
    let (train, held) = slices.split_at(slices.len() - n_held);
    // a single slice is evaluated on fresh noise instead
    let held = if held.is_empty() { train } else { held };

    let mut net = ConvDenoiser::seeded(config.seed);
    let mut adam = AdamState::new(ConvDenoiser::param_count(), config.adam);
    let mut rng = GaussianStream::new(config.seed ^ 0x7261_696e);
    let mut history = Vec::with_capacity(config.epochs * train.len() * config.steps_per_slice);
    for _ in 0..config.epochs {
        for slice in train {
            for _ in 0..config.steps_per_slice {
                let (crop, w, h) = random_crop(slice, config.crop, &mut rng);
                let t = 1 + rng.next_index(schedule.t_max());
                let a = schedule.alpha_bar(t);
                let noise = rng.gaussian_vec(crop.len());
                let x_t = diffuse(&crop, &noise, a);
                let cache = net.forward(&x_t, w, h, a)?;
                let n = crop.len() as f64;
                let mut loss = 0.0;
                let grad_eps: Vec<f64> = cache
                    .eps
                    .iter()
                    .zip(&noise)
                    .map(|(p, e)| {
                        loss += (p - e) * (p - e);
                        2.0 * (p - e) / n
                    })
                    .collect();
                let (_, grad_w) = net.backward(&cache, &grad_eps)?;
                adam.step(net.params_mut(), &grad_w)?;
                history.push(loss / n);
            }
        }
    }
    let (held_out_loss, baseline_loss) = held_out_losses(&net, held, schedule, config)?;
    Ok((
        net,
        TrainReport {
            loss_history: history,
            held_out_loss,
            baseline_loss,
            n_train: train.len(),
            n_held_out: n_held,
        },
    ))
}

/// Mean squared noise error of `net` and of the scaled-input baseline on
/// a fixed set of draws over `slices`.
pub(crate) fn held_out_losses(
    net: &ConvDenoiser,
    slices: &[Image2D],
    schedule: &NoiseSchedule,
    config: &TrainConfig,
) -> Result<(f64, f64)> {
    let mut rng = GaussianStream::new(config.seed ^ 0x6576_616c);
    let (mut net_sum, mut base_sum, mut count) = (0.0, 0.0, 0.0);
    for slice in slices {
        for _ in 0..config.eval_draws.max(1) {
            let t = 1 + rng.next_index(schedule.t_max());
            let a = schedule.alpha_bar(t);
            let noise = rng.gaussian_vec(slice.data.len());
            let x_t = diffuse(&slice.data, &noise, a);
            let eps = net.predict_eps(&x_t, slice.width, slice.height, a)?;
            let s = (1.0 - a).sqrt();
            for ((p, e), x) in eps.iter().zip(&noise).zip(&x_t) {
                net_sum += (p - e) * (p - e);
                base_sum += (s * x - e) * (s * x - e);
            }
            count += noise.len() as f64;
        }
    }
    Ok((net_sum / count, base_sum / count))
}

fn diffuse(x0: &[f64], noise: &[f64], alpha_bar: f64) -> Vec<f64> {
    let (sa, sn) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    x0.iter().zip(noise).map(|(x, e)| sa * x + sn * e).collect()
}

fn random_crop(slice: &Image2D, size: usize, rng: &mut GaussianStream) -> (Vec<f64>, usize, usize) {
    let w = size.min(slice.width);
    let h = size.min(slice.height);
    let x0 = rng.next_index(slice.width - w + 1);
    let y0 = rng.next_index(slice.height - h + 1);
    let mut out = Vec::with_capacity(w * h);
    for y in y0..y0 + h {
        out.extend_from_slice(&slice.data[y * slice.width + x0..y * slice.width + x0 + w]);
    }
    (out, w, h)
}
