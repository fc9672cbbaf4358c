use thiserror::Error;

use crate::volume::dot;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgOptions {
    /// Stop once `‖Mx − b‖ ≤ tol · ‖b‖`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            tol: 1e-6,
            max_iter: 30,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CgReport {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
    /// `‖r_k‖` for k = 0..=iterations.
    pub residual_history: Vec<f64>,
}

#[derive(Clone, Debug, Error)]
pub enum CgError {
    #[error("CG did not converge in {} iterations (relative residual {:.3e})", .0.iterations, .0.relative_residual)]
    NotConverged(CgReport),
    #[error("CG breakdown at iteration {iteration}: non-positive curvature {curvature:e}")]
    Breakdown {
        iteration: usize,
        curvature: f64,
        report: CgReport,
    },
}

impl CgError {
    /// The last iterate reached before giving up.
    pub fn into_report(self) -> CgReport {
        match self {
            CgError::NotConverged(r) => r,
            CgError::Breakdown { report, .. } => report,
        }
    }
}

/// Conjugate gradients for `M x = b` with `M` symmetric positive definite,
/// supplied as a matrix-free product.
pub fn cg_solve(
    mut apply_m: impl FnMut(&[f64]) -> Vec<f64>,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: CgOptions,
) -> Result<CgReport, CgError> {
    let n = b.len();
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return Ok(CgReport {
            x: vec![0.0; n],
            iterations: 0,
            relative_residual: 0.0,
            residual_history: vec![0.0],
        });
    }
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    let mut r: Vec<f64> = if x0.is_some() {
        let mx = apply_m(&x);
        b.iter().zip(&mx).map(|(bi, mi)| bi - mi).collect()
    } else {
        b.to_vec()
    };
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut history = vec![rr.sqrt()];
    let threshold = opts.tol * b_norm;
    let report = |x: Vec<f64>, it: usize, rr: f64, history: Vec<f64>| CgReport {
        x,
        iterations: it,
        relative_residual: rr.sqrt() / b_norm,
        residual_history: history,
    };
    if rr.sqrt() <= threshold {
        return Ok(report(x, 0, rr, history));
    }
    for it in 1..=opts.max_iter {
        let mp = apply_m(&p);
        let curvature = dot(&p, &mp);
        if !(curvature.is_finite() && curvature > 0.0) {
            return Err(CgError::Breakdown {
                iteration: it,
                curvature,
                report: report(x, it - 1, rr, history),
            });
        }
        let alpha = rr / curvature;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * mp[i];
        }
        let rr_new = dot(&r, &r);
        history.push(rr_new.sqrt());
        if rr_new.sqrt() <= threshold {
            return Ok(report(x, it, rr_new, history));
        }
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    Err(CgError::NotConverged(report(x, opts.max_iter, rr, history)))
}
