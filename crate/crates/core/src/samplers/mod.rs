//! Reverse-diffusion reconstruction loops: SITCOM, NERD-A (ADMM z-TV),
//! NERD-P (primal-dual z-TV) and a DDS-style baseline.
//!
//! Every sampler starts from `x_{t_N} ~ N(0, I)` and, at each sampling time,
//! produces a denoised estimate `x₀` and re-noises it to the next time with
//! a fresh `η`. The PRNG stream is consumed identically by all methods (one
//! volume for the initial state, one per step), so runs with the same seed
//! share noise realizations.

mod config;
mod surrogate;

use std::time::Instant;

use serde::Serialize;

pub use config::{Method, SamplerConfig};
pub use surrogate::{admm_dual_update, pdhg_dual_update, LinearSurrogate, SurrogateRun};

use crate::error::{Error, Result};
use crate::forward::LinearOperator;
use crate::metrics::mean_axial_psnr;
use crate::optim::{cg_solve, AdamConfig, AdamState};
use crate::priors::{Denoiser, NoiseSchedule};
use crate::rng::GaussianStream;
use crate::volume::{dz_adjoint, dz_forward, tv_z, Volume3D};

/// Everything a sampler reads but never modifies.
#[derive(Clone, Copy)]
pub struct Problem<'a> {
    pub op: &'a dyn LinearOperator,
    pub y: &'a [f64],
    pub denoiser: &'a dyn Denoiser,
    /// Full diffusion schedule; the sampler sub-samples it to `n_steps`.
    pub schedule: &'a NoiseSchedule,
    pub ground_truth: Option<&'a Volume3D>,
}

/// NERD-A splitting variables for `z = D_z x₀`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmmVars {
    pub z: Volume3D,
    pub w: Volume3D,
}

/// NERD-P dual `u`, primal `w_t` and extrapolated primal `w̄_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct PdhgVars {
    pub u: Volume3D,
    pub w: Volume3D,
    pub w_bar: Volume3D,
}

#[derive(Clone, Debug)]
pub struct SamplerState {
    pub x_t: Volume3D,
    /// Index of the next sampling step to execute.
    pub cursor: usize,
    pub admm: Option<AdmmVars>,
    pub pdhg: Option<PdhgVars>,
    /// Denoised estimate from the most recent step.
    pub x0: Option<Volume3D>,
    rng: GaussianStream,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRecord {
    /// 1-based step counter.
    pub step: usize,
    pub t_index: usize,
    /// `‖A x₀ − y‖`.
    pub data_residual: f64,
    /// `‖D_z x₀‖₁`.
    pub tv_z: f64,
    /// Mean axial-slice PSNR of `x₀` against the ground truth (data range 1).
    pub psnr: Option<f64>,
    pub wall_ms: f64,
    /// Inner objective before each Adam update.
    pub inner_losses: Vec<f64>,
    /// DDS inner CG solves that stopped without reaching tolerance.
    pub cg_not_converged: usize,
}

pub struct StepOutput {
    pub x0: Volume3D,
    pub inner_losses: Vec<f64>,
    pub cg_not_converged: usize,
}

pub struct SamplerOutput {
    pub reconstruction: Volume3D,
    pub trace: Vec<TraceRecord>,
    pub state: SamplerState,
}

pub struct Sampler<'a> {
    config: SamplerConfig,
    problem: Problem<'a>,
    schedule: NoiseSchedule,
}

impl<'a> Sampler<'a> {
    pub fn new(config: SamplerConfig, problem: Problem<'a>) -> Result<Self> {
        config.validate()?;
        if problem.y.len() != problem.op.range_len() {
            return Err(Error::shape(problem.op.range_len(), problem.y.len()));
        }
        if problem.y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("measurements".into()));
        }
        if let Some(gt) = problem.ground_truth {
            if gt.dims() != problem.op.domain() {
                return Err(Error::shape(problem.op.domain(), gt.dims()));
            }
        }
        let schedule = problem.schedule.with_steps(config.n_steps)?;
        Ok(Sampler {
            config,
            problem,
            schedule,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    /// The `n_steps` sub-schedule actually sampled.
    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn initialize(&self) -> Result<SamplerState> {
        let d = self.problem.op.domain();
        let mut rng = GaussianStream::new(self.config.seed);
        let x_t = Volume3D::from_vec(d.nx, d.ny, d.nz, rng.gaussian_vec(d.len()))?;
        let zeros = x_t.zeros_like();
        let admm = (self.config.method == Method::NerdA).then(|| AdmmVars {
            z: zeros.clone(),
            w: zeros.clone(),
        });
        let pdhg = if self.config.method == Method::NerdP {
            let a = self.schedule.alpha_bar(self.schedule.steps()[0]);
            let w = self.problem.denoiser.denoise(&x_t, a)?;
            Some(PdhgVars {
                u: zeros.clone(),
                w_bar: w.clone(),
                w,
            })
        } else {
            None
        };
        Ok(SamplerState {
            x_t,
            cursor: 0,
            admm,
            pdhg,
            x0: None,
            rng,
        })
    }

    /// Runs the configured method at the state's cursor and advances it.
    pub fn step(&self, state: &mut SamplerState) -> Result<TraceRecord> {
        let i = state.cursor;
        if i >= self.schedule.n_steps() {
            return Err(Error::param("sampler already finished"));
        }
        let start = self.config.record_wall_time.then(Instant::now);
        let out = self.step_at(state, i)?;
        state.cursor += 1;
        let wall_ms = start.map_or(0.0, |s| s.elapsed().as_secs_f64() * 1e3);
        self.record(i, out, wall_ms)
    }

    /// One step of the configured method at sampling index `i` without
    /// moving the cursor (useful for frozen-time iterations).
    pub fn step_at(&self, state: &mut SamplerState, i: usize) -> Result<StepOutput> {
        let abort = |e: Error| match e {
            Error::SamplerAbort { .. } => e,
            other => Error::SamplerAbort {
                step: i + 1,
                reason: other.to_string(),
            },
        };
        match self.config.method {
            Method::Sitcom => self.sitcom_step(state, i),
            Method::NerdA => self.nerd_a_step(state, i),
            Method::NerdP => self.nerd_p_step(state, i),
            Method::Dds => self.dds_step(state, i),
        }
        .map_err(abort)
    }

    pub fn run(&self) -> Result<SamplerOutput> {
        let mut state = self.initialize()?;
        let mut trace = Vec::with_capacity(self.schedule.n_steps());
        while state.cursor < self.schedule.n_steps() {
            trace.push(self.step(&mut state)?);
        }
        let reconstruction = state.x0.clone().expect("at least one step ran");
        Ok(SamplerOutput {
            reconstruction,
            trace,
            state,
        })
    }

    fn record(&self, i: usize, out: StepOutput, wall_ms: f64) -> Result<TraceRecord> {
        let residual = self.residual(&out.x0)?;
        let psnr = match self.problem.ground_truth {
            Some(gt) => Some(mean_axial_psnr(&out.x0, gt, 1.0)?),
            None => None,
        };
        Ok(TraceRecord {
            step: i + 1,
            t_index: self.schedule.steps()[i],
            data_residual: residual.iter().map(|r| r * r).sum::<f64>().sqrt(),
            tv_z: tv_z(&out.x0),
            psnr,
            wall_ms,
            inner_losses: out.inner_losses,
            cg_not_converged: out.cg_not_converged,
        })
    }

    fn times(&self, i: usize) -> (f64, f64) {
        let a = self.schedule.alpha_bar(self.schedule.steps()[i]);
        let a_prev = self.schedule.alpha_bar(self.schedule.prev_time(i));
        (a, a_prev)
    }

    fn residual(&self, x: &Volume3D) -> Result<Vec<f64>> {
        let mut r = self.problem.op.apply(x)?;
        for (ri, yi) in r.iter_mut().zip(self.problem.y) {
            *ri -= yi;
        }
        Ok(r)
    }

    /// `(‖A x − y‖², 2 Aᵀ(A x − y))`.
    fn data_term(&self, x: &Volume3D) -> Result<(f64, Volume3D)> {
        let r = self.residual(x)?;
        let loss = r.iter().map(|v| v * v).sum();
        Ok((loss, self.problem.op.adjoint(&r)?.scale(2.0)))
    }

    /// `x_{t−1} = sqrt(ᾱ_{t−1}) x₀ + sqrt(1 − ᾱ_{t−1}) η`.
    fn resample(&self, state: &mut SamplerState, x0: &Volume3D, a_prev: f64) -> Result<()> {
        let eta = state.rng.gaussian_vec(x0.len());
        let (s, n) = (a_prev.sqrt(), (1.0 - a_prev).sqrt());
        let data = x0.data().iter().zip(&eta).map(|(x, e)| s * x + n * e).collect();
        state.x_t = Volume3D::from_vec(x0.nx(), x0.ny(), x0.nz(), data)?;
        state.x0 = Some(x0.clone());
        Ok(())
    }

    fn adam(&self, len: usize) -> AdamState {
        AdamState::new(len, AdamConfig::with_lr(self.config.lr))
    }

    fn check_loss(loss: f64, i: usize) -> Result<()> {
        if loss.is_finite() {
            Ok(())
        } else {
            Err(Error::SamplerAbort {
                step: i + 1,
                reason: format!("non-finite inner loss {loss}"),
            })
        }
    }

    /// K Adam updates of `v′` from `x_t` on
    /// `‖A f(v′) − y‖² + λ‖v′ − x_t‖² [+ (ρ/2)‖D_z f(v′) − z + w‖²]`.
    pub(crate) fn optimize_input(
        &self,
        x_t: &Volume3D,
        a: f64,
        i: usize,
        admm: Option<&AdmmVars>,
    ) -> Result<(Volume3D, Vec<f64>)> {
        let cfg = &self.config;
        let mut v = x_t.clone();
        let mut adam = self.adam(v.len());
        let mut losses = Vec::with_capacity(cfg.inner_steps);
        for _ in 0..cfg.inner_steps {
            let mut loss = 0.0;
            let (_, mut grad) = self.problem.denoiser.denoise_and_vjp(&v, a, &mut |f| {
                let (data, mut cot) = self.data_term(f)?;
                loss = data;
                if let Some(vars) = admm.filter(|_| cfg.rho > 0.0) {
                    let r = dz_forward(f).sub(&vars.z)?.axpy(1.0, &vars.w)?;
                    loss += 0.5 * cfg.rho * r.l2_norm_sq();
                    cot.add_scaled(cfg.rho, &dz_adjoint(&r))?;
                }
                Ok(cot)
            })?;
            let anchor = v.sub(x_t)?;
            loss += cfg.lambda * anchor.l2_norm_sq();
            grad.add_scaled(2.0 * cfg.lambda, &anchor)?;
            Self::check_loss(loss, i)?;
            losses.push(loss);
            adam.step(v.data_mut(), grad.data())?;
        }
        Ok((v, losses))
    }

    pub fn sitcom_step(&self, state: &mut SamplerState, i: usize) -> Result<StepOutput> {
        let (a, a_prev) = self.times(i);
        let (v, losses) = self.optimize_input(&state.x_t, a, i, None)?;
        let x0 = self.problem.denoiser.denoise(&v, a)?;
        self.resample(state, &x0, a_prev)?;
        Ok(StepOutput {
            x0,
            inner_losses: losses,
            cg_not_converged: 0,
        })
    }

    pub fn nerd_a_step(&self, state: &mut SamplerState, i: usize) -> Result<StepOutput> {
        let (a, a_prev) = self.times(i);
        let mut vars = state
            .admm
            .take()
            .ok_or_else(|| Error::param("nerd-a step needs ADMM state"))?;
        let (v, losses) = self.optimize_input(&state.x_t, a, i, Some(&vars))?;
        let x0 = self.problem.denoiser.denoise(&v, a)?;
        let kappa = if self.config.rho > 0.0 {
            self.config.lambda_z / self.config.rho
        } else {
            0.0
        };
        admm_dual_update(&mut vars, &dz_forward(&x0), kappa)?;
        state.admm = Some(vars);
        self.resample(state, &x0, a_prev)?;
        Ok(StepOutput {
            x0,
            inner_losses: losses,
            cg_not_converged: 0,
        })
    }

    pub fn nerd_p_step(&self, state: &mut SamplerState, i: usize) -> Result<StepOutput> {
        let cfg = &self.config;
        let (a, a_prev) = self.times(i);
        let mut vars = state
            .pdhg
            .take()
            .ok_or_else(|| Error::param("nerd-p step needs primal-dual state"))?;
        let x_t = &state.x_t;
        // Steps 1-2
        let w_prev = vars.w.clone();
        let w_hat = w_prev.axpy(1.0, &dz_adjoint(&vars.u).scale(-cfg.tau * cfg.lambda_z))?;
        // Step 3: joint Adam on the concatenation (v′, w)
        let n = x_t.len();
        let d = x_t.dims();
        let mut var = Vec::with_capacity(2 * n);
        var.extend_from_slice(x_t.data());
        var.extend_from_slice(w_hat.data());
        let mut adam = self.adam(2 * n);
        let mut losses = Vec::with_capacity(cfg.inner_steps);
        let as_volume = |s: &[f64]| Volume3D::from_vec(d.nx, d.ny, d.nz, s.to_vec());
        for _ in 0..cfg.inner_steps {
            let v = as_volume(&var[..n])?;
            let w = as_volume(&var[n..])?;
            let mut coupling = 0.0;
            let mut diff = None;
            let (_, mut grad_v) = self.problem.denoiser.denoise_and_vjp(&v, a, &mut |f| {
                let dfw = f.sub(&w)?;
                coupling = dfw.l2_norm_sq();
                let cot = dfw.scale(2.0 * cfg.lambda_prime);
                diff = Some(dfw);
                Ok(cot)
            })?;
            let dfw = diff.expect("cotangent callback ran");
            let anchor = v.sub(x_t)?;
            grad_v.add_scaled(2.0 * cfg.lambda, &anchor)?;
            let (data, mut grad_w) = self.data_term(&w)?;
            let prox = w.sub(&w_hat)?;
            grad_w.add_scaled(1.0 / cfg.tau, &prox)?;
            grad_w.add_scaled(-2.0 * cfg.lambda_prime, &dfw)?;
            let loss = data
                + cfg.lambda * anchor.l2_norm_sq()
                + prox.l2_norm_sq() / (2.0 * cfg.tau)
                + cfg.lambda_prime * coupling;
            Self::check_loss(loss, i)?;
            losses.push(loss);
            let mut grad = grad_v.into_vec();
            grad.extend_from_slice(grad_w.data());
            adam.step(&mut var, &grad)?;
        }
        let v = as_volume(&var[..n])?;
        vars.w = as_volume(&var[n..])?;
        // Steps 4-6
        pdhg_dual_update(&mut vars, &w_prev, cfg.extrapolation, cfg.sigma, cfg.lambda_z)?;
        if vars.u.max_abs() > 1.0 {
            return Err(Error::SamplerAbort {
                step: i + 1,
                reason: "dual variable left the unit ball".into(),
            });
        }
        state.pdhg = Some(vars);
        // Steps 7-8
        let x0 = self.problem.denoiser.denoise(&v, a)?;
        self.resample(state, &x0, a_prev)?;
        Ok(StepOutput {
            x0,
            inner_losses: losses,
            cg_not_converged: 0,
        })
    }

    /// Tweedie estimate, then `dds_admm_iters` ADMM iterations on
    /// `‖Ax − y‖² + λ_z‖D_z x‖₁` started at that estimate, each solving its
    /// quadratic subproblem with CG.
    pub fn dds_step(&self, state: &mut SamplerState, i: usize) -> Result<StepOutput> {
        let (a, a_prev) = self.times(i);
        let x0 = self.problem.denoiser.denoise(&state.x_t, a)?;
        let (x, _, failures) = self.dds_admm(x0, self.config.dds_admm_iters)?;
        self.resample(state, &x, a_prev)?;
        Ok(StepOutput {
            x0: x,
            inner_losses: Vec::new(),
            cg_not_converged: failures,
        })
    }

    /// ADMM with `z = w = 0` initially and CG warm-started at `x`. Returns
    /// the iterate, the splitting variables and the count of CG solves
    /// that stopped short of tolerance.
    pub(crate) fn dds_admm(&self, mut x: Volume3D, iterations: usize) -> Result<(Volume3D, AdmmVars, usize)> {
        let cfg = &self.config;
        let mut vars = AdmmVars {
            z: x.zeros_like(),
            w: x.zeros_like(),
        };
        if iterations == 0 {
            return Ok((x, vars, 0));
        }
        let rho = cfg.dds_rho;
        let op = self.problem.op;
        let d = x.dims();
        let rhs_data = op.adjoint(self.problem.y)?.scale(2.0);
        let apply = |p: &[f64]| -> Vec<f64> {
            let pv = Volume3D::from_vec(d.nx, d.ny, d.nz, p.to_vec()).expect("CG vector has volume length");
            let ap = op.apply(&pv).expect("operator domain matches");
            let mut out = op.adjoint(&ap).expect("operator range matches").scale(2.0);
            out.add_scaled(rho, &dz_adjoint(&dz_forward(&pv))).expect("same dims");
            out.into_vec()
        };
        let mut failures = 0;
        for _ in 0..iterations {
            let mut rhs = rhs_data.clone();
            rhs.add_scaled(rho, &dz_adjoint(&vars.z.sub(&vars.w)?))?;
            let report = match cg_solve(&apply, rhs.data(), Some(x.data()), cfg.cg) {
                Ok(r) => r,
                Err(e) => {
                    failures += 1;
                    e.into_report()
                }
            };
            x = Volume3D::from_vec(d.nx, d.ny, d.nz, report.x)?;
            x.check_finite("DDS iterate")?;
            admm_dual_update(&mut vars, &dz_forward(&x), cfg.lambda_z / rho)?;
        }
        Ok((x, vars, failures))
    }
}

pub fn run_sampler(config: SamplerConfig, problem: Problem<'_>) -> Result<SamplerOutput> {
    Sampler::new(config, problem)?.run()
}

/// CSV with columns `step,t_index,data_residual,tv_z,psnr,wall_ms`.
pub fn trace_to_csv(trace: &[TraceRecord]) -> String {
    let mut out = String::from("step,t_index,data_residual,tv_z,psnr,wall_ms\n");
    for r in trace {
        let psnr = r.psnr.map(crate::metrics::fmt_metric).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.step, r.t_index, r.data_residual, r.tv_z, psnr, r.wall_ms
        ));
    }
    out
}
