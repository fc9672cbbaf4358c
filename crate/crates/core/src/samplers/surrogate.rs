//! The samplers' splitting updates, and the convex problem they solve when
//! the denoiser is the identity, time is frozen and inner problems are
//! solved exactly:
//!
//! ```text
//! min_w ‖A w − y‖² + λ_z ‖D_z w‖₁
//! ```

use super::{AdmmVars, PdhgVars};
use crate::error::{Error, Result};
use crate::forward::LinearOperator;
use crate::optim::{cg_solve, project_linf_ball, soft_threshold, CgOptions};
use crate::volume::{dz_adjoint, dz_forward, tv_z, Volume3D};

/// ADMM Steps 3-4: `z ← S_κ(D_z x₀ + w)`, `w ← w + D_z x₀ − z`.
pub fn admm_dual_update(vars: &mut AdmmVars, dz_x0: &Volume3D, kappa: f64) -> Result<()> {
    let shifted = dz_x0.axpy(1.0, &vars.w)?;
    let z = soft_threshold(shifted.data(), kappa);
    vars.z.data_mut().copy_from_slice(&z);
    vars.w = shifted.sub(&vars.z)?;
    Ok(())
}

/// Primal-dual Steps 4-6 with `K = λ_z D_z`: `w̄ ← w + θ(w − w_prev)`,
/// `u ← Π_{‖·‖∞ ≤ 1}(u + σ λ_z D_z w̄)`.
pub fn pdhg_dual_update(
    vars: &mut PdhgVars,
    w_prev: &Volume3D,
    theta: f64,
    sigma: f64,
    lambda_z: f64,
) -> Result<()> {
    vars.w_bar = vars.w.zip_map(w_prev, |w, p| w + theta * (w - p))?;
    let u_hat = dz_forward(&vars.w_bar).axpy(sigma * lambda_z, &vars.u)?;
    let u = project_linf_ball(u_hat.data());
    vars.u.data_mut().copy_from_slice(&u);
    Ok(())
}

#[derive(Clone, Debug)]
pub struct SurrogateRun {
    pub solution: Volume3D,
    /// Objective after each outer iteration.
    pub objective: Vec<f64>,
}

pub struct LinearSurrogate<'a> {
    op: &'a dyn LinearOperator,
    y: &'a [f64],
    lambda_z: f64,
    cg: CgOptions,
}

impl<'a> LinearSurrogate<'a> {
    pub fn new(op: &'a dyn LinearOperator, y: &'a [f64], lambda_z: f64) -> Result<Self> {
        if y.len() != op.range_len() {
            return Err(Error::shape(op.range_len(), y.len()));
        }
        if !(lambda_z >= 0.0 && lambda_z.is_finite()) {
            return Err(Error::param("lambda_z must be finite and >= 0"));
        }
        Ok(LinearSurrogate {
            op,
            y,
            lambda_z,
            cg: CgOptions {
                tol: 1e-12,
                max_iter: 2000,
            },
        })
    }

    pub fn with_cg(mut self, cg: CgOptions) -> Self {
        self.cg = cg;
        self
    }

    pub fn objective(&self, w: &Volume3D) -> Result<f64> {
        let aw = self.op.apply(w)?;
        let data: f64 = aw.iter().zip(self.y).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(data + self.lambda_z * tv_z(w))
    }

    fn zeros(&self) -> Volume3D {
        let d = self.op.domain();
        Volume3D::zeros(d.nx, d.ny, d.nz)
    }

    /// Solves `(2AᵀA + shift·I + rho·D_zᵀD_z) x = rhs` from `x0`.
    fn solve(&self, rhs: &Volume3D, x0: &Volume3D, shift: f64, rho: f64) -> Result<Volume3D> {
        let d = rhs.dims();
        let op = self.op;
        let apply = |p: &[f64]| -> Vec<f64> {
            let pv = Volume3D::from_vec(d.nx, d.ny, d.nz, p.to_vec()).expect("volume length");
            let ap = op.apply(&pv).expect("operator domain");
            let mut out = op.adjoint(&ap).expect("operator range").scale(2.0);
            out.add_scaled(shift, &pv).expect("same dims");
            if rho > 0.0 {
                out.add_scaled(rho, &dz_adjoint(&dz_forward(&pv))).expect("same dims");
            }
            out.into_vec()
        };
        let report = cg_solve(apply, rhs.data(), Some(x0.data()), self.cg)
            .map_err(|e| Error::param(format!("surrogate inner solve failed: {e}")))?;
        Volume3D::from_vec(d.nx, d.ny, d.nz, report.x)
    }

    /// NERD-A with exact Step 1:
    /// `x₀ = argmin ‖Ax − y‖² + (ρ/2)‖D_z x − z + w‖²`.
    pub fn admm(&self, rho: f64, iterations: usize) -> Result<SurrogateRun> {
        if !(rho > 0.0) {
            return Err(Error::param("ADMM needs rho > 0"));
        }
        let aty = self.op.adjoint(self.y)?.scale(2.0);
        let mut x = self.zeros();
        let mut vars = AdmmVars {
            z: x.zeros_like(),
            w: x.zeros_like(),
        };
        let mut objective = Vec::with_capacity(iterations);
        for _ in 0..iterations {
            let mut rhs = aty.clone();
            rhs.add_scaled(rho, &dz_adjoint(&vars.z.sub(&vars.w)?))?;
            x = self.solve(&rhs, &x, 0.0, rho)?;
            admm_dual_update(&mut vars, &dz_forward(&x), self.lambda_z / rho)?;
            objective.push(self.objective(&x)?);
        }
        Ok(SurrogateRun {
            solution: x,
            objective,
        })
    }

    /// NERD-P with exact Step 3:
    /// `w = argmin ‖Aw − y‖² + (1/2τ)‖w − ŵ‖²`.
    pub fn pdhg(&self, tau: f64, sigma: f64, theta: f64, iterations: usize) -> Result<SurrogateRun> {
        if !(tau > 0.0 && sigma > 0.0) {
            return Err(Error::param("PDHG needs tau, sigma > 0"));
        }
        let aty = self.op.adjoint(self.y)?.scale(2.0);
        let zeros = self.zeros();
        let mut vars = PdhgVars {
            u: zeros.clone(),
            w: zeros.clone(),
            w_bar: zeros,
        };
        let mut objective = Vec::with_capacity(iterations);
        for _ in 0..iterations {
            let w_prev = vars.w.clone();
            let w_hat = w_prev.axpy(1.0, &dz_adjoint(&vars.u).scale(-tau * self.lambda_z))?;
            let rhs = w_hat.axpy(1.0 / tau, &aty)?;
            vars.w = self.solve(&rhs, &w_prev, 1.0 / tau, 0.0)?;
            pdhg_dual_update(&mut vars, &w_prev, theta, sigma, self.lambda_z)?;
            objective.push(self.objective(&vars.w)?);
        }
        Ok(SurrogateRun {
            solution: vars.w,
            objective,
        })
    }
}
