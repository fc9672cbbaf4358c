//! Three-layer 3×3 convolutional noise predictor with hand-written reverse
//! mode.
//!
//! Input channels are the slice itself and a constant channel holding
//! `sqrt(1 − ᾱ)`. Layers map 2→8→8→1 channels with zero "same" padding and
//! ReLU between layers. The output is `ε̂`; the denoised slice follows from
//! Tweedie's formula.

use super::{tweedie_denoise, Denoiser};
use crate::error::{Error, Result};
use crate::rng::GaussianStream;
use crate::volume::Volume3D;

/// Channel counts per activation, input first.
pub const CONV_CHANNELS: [usize; 4] = [2, 8, 8, 1];
pub const CONV_KERNEL: usize = 3;

const N_LAYERS: usize = CONV_CHANNELS.len() - 1;

fn layer_offsets() -> [(usize, usize, usize); N_LAYERS] {
    // (weight offset, bias offset, end) per layer
    let mut out = [(0, 0, 0); N_LAYERS];
    let mut off = 0;
    for (l, o) in out.iter_mut().enumerate() {
        let (cin, cout) = (CONV_CHANNELS[l], CONV_CHANNELS[l + 1]);
        let w = off;
        let b = w + cout * cin * CONV_KERNEL * CONV_KERNEL;
        off = b + cout;
        *o = (w, b, off);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvDenoiser {
    params: Vec<f64>,
}

/// Activations saved by the forward pass of one slice.
#[derive(Clone, Debug)]
pub struct ConvCache {
    width: usize,
    height: usize,
    /// Layer inputs: `inputs[0]` is the 2-channel network input,
    /// `inputs[l]` the post-ReLU output of layer `l - 1`.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<f64>>,
    pub eps: Vec<f64>,
}

impl ConvCache {
    /// Hidden pre-activations, flattened; used to detect ReLU kinks.
    pub fn pre_activations(&self) -> impl Iterator<Item = f64> + '_ {
        self.pre.iter().flatten().copied()
    }
}

impl ConvDenoiser {
    pub fn param_count() -> usize {
        layer_offsets()[N_LAYERS - 1].2
    }

    pub fn from_params(params: Vec<f64>) -> Result<Self> {
        if params.len() != Self::param_count() {
            return Err(Error::shape(Self::param_count(), params.len()));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("conv weights".into()));
        }
        Ok(ConvDenoiser { params })
    }

    pub fn zeros() -> Self {
        ConvDenoiser {
            params: vec![0.0; Self::param_count()],
        }
    }

    /// He-normal weights (`std = sqrt(2 / fan_in)`) and zero biases.
    pub fn seeded(seed: u64) -> Self {
        let mut rng = GaussianStream::new(seed);
        let mut params = vec![0.0; Self::param_count()];
        for (l, (w, b, _)) in layer_offsets().into_iter().enumerate() {
            let fan_in = CONV_CHANNELS[l] * CONV_KERNEL * CONV_KERNEL;
            let std = (2.0 / fan_in as f64).sqrt();
            for p in &mut params[w..b] {
                *p = std * rng.next_gaussian();
            }
        }
        ConvDenoiser { params }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Forward pass of one `width x height` slice, keeping activations.
    pub fn forward(&self, slice: &[f64], width: usize, height: usize, alpha_bar: f64) -> Result<ConvCache> {
        let plane = width * height;
        if slice.len() != plane || plane == 0 {
            return Err(Error::shape(plane, slice.len()));
        }
        let time = (1.0 - alpha_bar).max(0.0).sqrt();
        let mut input = Vec::with_capacity(2 * plane);
        input.extend_from_slice(slice);
        input.extend(std::iter::repeat_n(time, plane));
        let offsets = layer_offsets();
        let mut inputs = vec![input];
        let mut pre = Vec::with_capacity(N_LAYERS - 1);
        for l in 0..N_LAYERS {
            let (w, b, end) = offsets[l];
            let z = conv_forward(
                &inputs[l],
                &self.params[w..b],
                &self.params[b..end],
                CONV_CHANNELS[l],
                CONV_CHANNELS[l + 1],
                width,
                height,
            );
            if l + 1 < N_LAYERS {
                inputs.push(z.iter().map(|&v| v.max(0.0)).collect());
                pre.push(z);
            } else {
                return Ok(ConvCache {
                    width,
                    height,
                    inputs,
                    pre,
                    eps: z,
                });
            }
        }
        unreachable!()
    }

    pub fn predict_eps(&self, slice: &[f64], width: usize, height: usize, alpha_bar: f64) -> Result<Vec<f64>> {
        Ok(self.forward(slice, width, height, alpha_bar)?.eps)
    }

    /// Reverse pass: given `∂L/∂ε̂`, returns `(∂L/∂slice, ∂L/∂params)`.
    pub fn backward(&self, cache: &ConvCache, grad_eps: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (width, height) = (cache.width, cache.height);
        let plane = width * height;
        if grad_eps.len() != plane {
            return Err(Error::shape(plane, grad_eps.len()));
        }
        let offsets = layer_offsets();
        let mut grad_params = vec![0.0; self.params.len()];
        let mut grad = grad_eps.to_vec();
        for l in (0..N_LAYERS).rev() {
            let (w, b, end) = offsets[l];
            let (gw, rest) = grad_params[w..end].split_at_mut(b - w);
            let grad_in = conv_backward(
                &cache.inputs[l],
                &self.params[w..b],
                &grad,
                gw,
                rest,
                CONV_CHANNELS[l],
                CONV_CHANNELS[l + 1],
                width,
                height,
            );
            if l > 0 {
                let z = &cache.pre[l - 1];
                grad = grad_in
                    .iter()
                    .zip(z)
                    .map(|(g, &zv)| if zv > 0.0 { *g } else { 0.0 })
                    .collect();
            } else {
                // channel 1 is the constant time channel, not an input
                grad = grad_in[..plane].to_vec();
            }
        }
        Ok((grad, grad_params))
    }

    /// `Jᵀ cotangent` of `ε̂` with respect to the input slice.
    pub fn eps_input_vjp(&self, slice: &[f64], width: usize, height: usize, alpha_bar: f64, cotangent: &[f64]) -> Result<Vec<f64>> {
        let cache = self.forward(slice, width, height, alpha_bar)?;
        Ok(self.backward(&cache, cotangent)?.0)
    }

    /// Gradient of `⟨cotangent, ε̂⟩` with respect to the parameters.
    pub fn eps_weight_grad(&self, slice: &[f64], width: usize, height: usize, alpha_bar: f64, cotangent: &[f64]) -> Result<Vec<f64>> {
        let cache = self.forward(slice, width, height, alpha_bar)?;
        Ok(self.backward(&cache, cotangent)?.1)
    }

    fn check_alpha(alpha_bar: f64) -> Result<()> {
        if !(alpha_bar > 0.0 && alpha_bar <= 1.0) {
            return Err(Error::param(format!("alpha_bar must lie in (0, 1], got {alpha_bar}")));
        }
        Ok(())
    }
}

fn conv_forward(
    input: &[f64],
    weights: &[f64],
    bias: &[f64],
    cin: usize,
    cout: usize,
    width: usize,
    height: usize,
) -> Vec<f64> {
    let plane = width * height;
    let mut out = vec![0.0; cout * plane];
    for o in 0..cout {
        let dst = &mut out[o * plane..(o + 1) * plane];
        dst.fill(bias[o]);
        for i in 0..cin {
            let src = &input[i * plane..(i + 1) * plane];
            let kern = &weights[(o * cin + i) * 9..(o * cin + i + 1) * 9];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = kern[ky * 3 + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (dy, dx) = (ky as isize - 1, kx as isize - 1);
                    let (y_lo, y_hi) = valid_range(dy, height);
                    let (x_lo, x_hi) = valid_range(dx, width);
                    for y in y_lo..y_hi {
                        let sy = (y as isize + dy) as usize;
                        let row = &src[sy * width..(sy + 1) * width];
                        let drow = &mut dst[y * width..(y + 1) * width];
                        for x in x_lo..x_hi {
                            drow[x] += wv * row[(x as isize + dx) as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    weights: &[f64],
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    cin: usize,
    cout: usize,
    width: usize,
    height: usize,
) -> Vec<f64> {
    let plane = width * height;
    let mut grad_in = vec![0.0; cin * plane];
    for o in 0..cout {
        let go = &grad_out[o * plane..(o + 1) * plane];
        grad_b[o] += go.iter().sum::<f64>();
        for i in 0..cin {
            let src = &input[i * plane..(i + 1) * plane];
            let k0 = (o * cin + i) * 9;
            for ky in 0..3 {
                for kx in 0..3 {
                    let (dy, dx) = (ky as isize - 1, kx as isize - 1);
                    let (y_lo, y_hi) = valid_range(dy, height);
                    let (x_lo, x_hi) = valid_range(dx, width);
                    let wv = weights[k0 + ky * 3 + kx];
                    let mut acc = 0.0;
                    for y in y_lo..y_hi {
                        let sy = (y as isize + dy) as usize;
                        for x in x_lo..x_hi {
                            let sx = (x as isize + dx) as usize;
                            let g = go[y * width + x];
                            acc += g * src[sy * width + sx];
                            grad_in[i * plane + sy * width + sx] += wv * g;
                        }
                    }
                    grad_w[k0 + ky * 3 + kx] += acc;
                }
            }
        }
    }
    grad_in
}

// output rows/cols whose shifted source index stays inside the image
fn valid_range(shift: isize, len: usize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (len as isize - shift.max(0)).max(0) as usize;
    (lo.min(len), hi)
}

impl Denoiser for ConvDenoiser {
    fn denoise(&self, x: &Volume3D, alpha_bar: f64) -> Result<Volume3D> {
        Self::check_alpha(alpha_bar)?;
        let mut out = x.zeros_like();
        for k in 0..x.nz() {
            let slice = x.axial(k);
            let eps = self.predict_eps(slice, x.nx(), x.ny(), alpha_bar)?;
            out.axial_mut(k)
                .copy_from_slice(&tweedie_denoise(slice, &eps, alpha_bar)?);
        }
        Ok(out)
    }

    fn input_vjp(&self, x: &Volume3D, alpha_bar: f64, cotangent: &Volume3D) -> Result<Volume3D> {
        self.denoise_and_vjp(x, alpha_bar, &mut |_| Ok(cotangent.clone()))
            .map(|(_, g)| g)
    }

    fn denoise_and_vjp(
        &self,
        x: &Volume3D,
        alpha_bar: f64,
        cotangent_of: &mut dyn FnMut(&Volume3D) -> Result<Volume3D>,
    ) -> Result<(Volume3D, Volume3D)> {
        Self::check_alpha(alpha_bar)?;
        let mut out = x.zeros_like();
        let mut caches = Vec::with_capacity(x.nz());
        for k in 0..x.nz() {
            let slice = x.axial(k);
            let cache = self.forward(slice, x.nx(), x.ny(), alpha_bar)?;
            out.axial_mut(k)
                .copy_from_slice(&tweedie_denoise(slice, &cache.eps, alpha_bar)?);
            caches.push(cache);
        }
        let cot = cotangent_of(&out)?;
        out.check_same_dims(&cot)?;
        // x̂₀ = (x − s ε̂(x)) / √ᾱ  ⇒  Jᵀc = c/√ᾱ − (s/√ᾱ) J_εᵀ c
        let inv = 1.0 / alpha_bar.sqrt();
        let s = (1.0 - alpha_bar).sqrt();
        let mut grad = x.zeros_like();
        for (k, cache) in caches.iter().enumerate() {
            let c = cot.axial(k);
            let (g_eps, _) = self.backward(cache, c)?;
            for ((g, &ci), &ge) in grad.axial_mut(k).iter_mut().zip(c).zip(&g_eps) {
                *g = inv * ci - s * inv * ge;
            }
        }
        Ok((out, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::dot;

    fn random_slice(n: usize, seed: u64) -> Vec<f64> {
        GaussianStream::new(seed).gaussian_vec(n)
    }

    fn kink_free(net: &ConvDenoiser, x: &[f64], w: usize, h: usize, a: f64, tol: f64) -> bool {
        net.forward(x, w, h, a)
            .unwrap()
            .pre_activations()
            .all(|z| z.abs() > tol)
    }

    #[test]
    fn parameter_count() {
        assert_eq!(ConvDenoiser::param_count(), (2 * 8 * 9 + 8) + (8 * 8 * 9 + 8) + (8 * 9 + 1));
        assert!(ConvDenoiser::from_params(vec![0.0; 3]).is_err());
    }

    #[test]
    fn zero_weights_predict_zero_noise() {
        let net = ConvDenoiser::zeros();
        let eps = net.predict_eps(&random_slice(64, 1), 8, 8, 0.3).unwrap();
        assert!(eps.iter().all(|&e| e == 0.0));
        let x = Volume3D::from_vec(8, 8, 1, random_slice(64, 2)).unwrap();
        let d = net.denoise(&x, 0.25).unwrap();
        for (a, b) in d.data().iter().zip(x.data()) {
            assert!((a - 2.0 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_matches_naive_convolution() {
        // single layer check against a direct 4-nested-loop convolution
        let (w, h, cin, cout) = (5, 4, 2, 3);
        let input = random_slice(cin * w * h, 3);
        let weights = random_slice(cout * cin * 9, 4);
        let bias = random_slice(cout, 5);
        let fast = conv_forward(&input, &weights, &bias, cin, cout, w, h);
        for o in 0..cout {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut acc = bias[o];
                    for i in 0..cin {
                        for ky in -1..=1isize {
                            for kx in -1..=1isize {
                                let (sy, sx) = (y + ky, x + kx);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                let wv = weights[(o * cin + i) * 9 + ((ky + 1) * 3 + kx + 1) as usize];
                                acc += wv * input[i * w * h + (sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    let got = fast[o * w * h + y as usize * w + x as usize];
                    assert!((got - acc).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn input_vjp_matches_finite_differences() {
        let (w, h) = (8, 8);
        let hstep = 1e-5;
        let mut checked = 0;
        let mut seed = 100;
        while checked < 50 {
            seed += 1;
            let net = ConvDenoiser::seeded(seed);
            let x = random_slice(w * h, seed + 1000);
            let dir = random_slice(w * h, seed + 2000);
            let cot = random_slice(w * h, seed + 3000);
            let a = 0.1 + 0.8 * GaussianStream::new(seed).next_uniform();
            // central differences are exact on each linear piece of the net
            let xp: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + hstep * d).collect();
            let xm: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a - hstep * d).collect();
            if !kink_free(&net, &x, w, h, a, 1e-3) {
                continue;
            }
            let fp = dot(&cot, &net.predict_eps(&xp, w, h, a).unwrap());
            let fm = dot(&cot, &net.predict_eps(&xm, w, h, a).unwrap());
            let fd = (fp - fm) / (2.0 * hstep);
            let an = dot(&net.eps_input_vjp(&x, w, h, a, &cot).unwrap(), &dir);
            let rel = (fd - an).abs() / fd.abs().max(an.abs());
            assert!(rel <= 1e-6, "seed {seed}: fd {fd} analytic {an}");
            checked += 1;
        }
    }

    #[test]
    fn weight_grad_matches_finite_differences() {
        let (w, h) = (8, 8);
        let hstep = 1e-5;
        let mut checked = 0;
        let mut seed = 500;
        while checked < 50 {
            seed += 1;
            let net = ConvDenoiser::seeded(seed);
            let x = random_slice(w * h, seed + 1000);
            let cot = random_slice(w * h, seed + 3000);
            let a = 0.5;
            if !kink_free(&net, &x, w, h, a, 1e-2) {
                continue;
            }
            let grad = net.eps_weight_grad(&x, w, h, a, &cot).unwrap();
            let dir = random_slice(ConvDenoiser::param_count(), seed + 4000);
            let shifted = |sgn: f64| {
                let p: Vec<f64> = net.params().iter().zip(&dir).map(|(p, d)| p + sgn * hstep * d).collect();
                let n = ConvDenoiser::from_params(p).unwrap();
                dot(&cot, &n.predict_eps(&x, w, h, a).unwrap())
            };
            let fd = (shifted(1.0) - shifted(-1.0)) / (2.0 * hstep);
            let an = dot(&grad, &dir);
            let rel = (fd - an).abs() / fd.abs().max(an.abs());
            assert!(rel <= 1e-6, "seed {seed}: fd {fd} analytic {an}");
            checked += 1;
        }
    }

    #[test]
    fn denoiser_vjp_matches_finite_differences() {
        let (n, nz) = (6, 2);
        let net = ConvDenoiser::seeded(9);
        let mut g = GaussianStream::new(10);
        let x = Volume3D::from_fn(n, n, nz, |_, _, _| g.next_gaussian());
        let dir = Volume3D::from_fn(n, n, nz, |_, _, _| g.next_gaussian());
        let cot = Volume3D::from_fn(n, n, nz, |_, _, _| g.next_gaussian());
        let a = 0.6;
        let hstep = 1e-5;
        let f = |v: &Volume3D| net.denoise(v, a).unwrap().dot(&cot).unwrap();
        let fd = (f(&dir.axpy(hstep, &x).unwrap()) - f(&dir.axpy(-hstep, &x).unwrap())) / (2.0 * hstep);
        let an = net.input_vjp(&x, a, &cot).unwrap().dot(&dir).unwrap();
        assert!((fd - an).abs() / an.abs() <= 1e-6, "fd {fd} analytic {an}");
    }

    #[test]
    fn rejects_shape_mismatch() {
        let net = ConvDenoiser::seeded(1);
        assert!(net.predict_eps(&[0.0; 10], 3, 3, 0.5).is_err());
        let cache = net.forward(&[0.0; 9], 3, 3, 0.5).unwrap();
        assert!(net.backward(&cache, &[0.0; 4]).is_err());
    }
}
