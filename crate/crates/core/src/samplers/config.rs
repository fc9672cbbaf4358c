use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::CgOptions;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Sitcom,
    NerdA,
    NerdP,
    Dds,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Sitcom, Method::NerdA, Method::NerdP, Method::Dds];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sitcom => "sitcom",
            Method::NerdA => "nerd-a",
            Method::NerdP => "nerd-p",
            Method::Dds => "dds",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?} (expected sitcom, nerd-a, nerd-p or dds)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub method: Method,
    /// Weight of the anchor `‖v′ − x_t‖²`.
    pub lambda: f64,
    /// Weight of the z-TV term.
    pub lambda_z: f64,
    /// ADMM penalty (NERD-A).
    pub rho: f64,
    /// Coupling weight `λ′` of `‖f(v′) − w‖²` (NERD-P).
    pub lambda_prime: f64,
    pub tau: f64,
    pub sigma: f64,
    /// Primal extrapolation factor θ in `w̄ = w + θ (w − w_prev)` (NERD-P).
    pub extrapolation: f64,
    pub n_steps: usize,
    /// Adam updates per sampling step.
    pub inner_steps: usize,
    pub lr: f64,
    pub seed: u64,
    /// ADMM iterations per step of the DDS baseline.
    pub dds_admm_iters: usize,
    pub dds_rho: f64,
    pub cg: CgOptions,
    /// Measure wall time per step; off by default so traces are reproducible.
    pub record_wall_time: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            method: Method::NerdP,
            lambda: 0.1,
            lambda_z: 0.05,
            rho: 1.0,
            lambda_prime: 1.0,
            tau: 0.01,
            sigma: 0.05,
            extrapolation: 1.0,
            n_steps: 30,
            inner_steps: 10,
            lr: 1e-3,
            seed: 0,
            dds_admm_iters: 5,
            dds_rho: 1.0,
            cg: CgOptions::default(),
            record_wall_time: false,
        }
    }
}

impl SamplerConfig {
    pub fn for_method(method: Method) -> Self {
        SamplerConfig {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("lambda", self.lambda),
            ("lambda_z", self.lambda_z),
            ("rho", self.rho),
            ("lambda_prime", self.lambda_prime),
            ("lr", self.lr),
            ("dds_rho", self.dds_rho),
            ("cg_tol", self.cg.tol),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::param(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.n_steps == 0 {
            return Err(Error::param("n_steps must be at least 1"));
        }
        match self.method {
            Method::Sitcom | Method::NerdA | Method::NerdP if self.inner_steps == 0 => {
                return Err(Error::param("inner_steps must be at least 1"));
            }
            Method::NerdA if self.lambda_z > 0.0 && self.rho == 0.0 => {
                return Err(Error::param("nerd-a needs rho > 0 when lambda_z > 0"));
            }
            Method::NerdP => {
                for (name, v) in [("tau", self.tau), ("sigma", self.sigma)] {
                    if !(v.is_finite() && v > 0.0) {
                        return Err(Error::param(format!("nerd-p needs {name} > 0, got {v}")));
                    }
                }
                if !(0.0..=1.0).contains(&self.extrapolation) {
                    return Err(Error::param("extrapolation must lie in [0, 1]"));
                }
            }
            Method::Dds if self.dds_admm_iters > 0 && self.dds_rho == 0.0 => {
                return Err(Error::param("dds needs dds_rho > 0 when dds_admm_iters > 0"));
            }
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("admm".parse::<Method>().is_err());
    }

    #[test]
    fn validation() {
        assert!(SamplerConfig::default().validate().is_ok());
        let bad = |f: fn(&mut SamplerConfig)| {
            let mut c = SamplerConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.lambda = -1.0));
        assert!(bad(|c| c.n_steps = 0));
        assert!(bad(|c| c.inner_steps = 0));
        assert!(bad(|c| c.tau = 0.0));
        assert!(bad(|c| c.lr = f64::NAN));
        assert!(bad(|c| {
            c.method = Method::NerdA;
            c.rho = 0.0;
        }));
        let mut ok = SamplerConfig::for_method(Method::NerdA);
        ok.rho = 0.0;
        ok.lambda_z = 0.0;
        assert!(ok.validate().is_ok());
        let mut dds = SamplerConfig::for_method(Method::Dds);
        dds.inner_steps = 0;
        assert!(dds.validate().is_ok());
    }
}
