//! Flat `key = value` run configuration.
//!
//! One entry per line; `#` starts a comment; unknown keys are rejected.
//! [`RunConfig::to_text`] writes every key, and parsing that text gives back
//! the same config.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::forward::{default_detectors, ProjectionGeometry, ViewSubsampling};
use crate::optim::AdamConfig;
use crate::priors::{GmmScalarPrior, TrainConfig};
use crate::samplers::SamplerConfig;
use crate::volume::Dims;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PriorKind {
    Gmm,
    Conv,
}

impl PriorKind {
    pub fn name(self) -> &'static str {
        match self {
            PriorKind::Gmm => "gmm",
            PriorKind::Conv => "conv",
        }
    }
}

impl FromStr for PriorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gmm" => Ok(PriorKind::Gmm),
            "conv" => Ok(PriorKind::Conv),
            _ => Err(Error::Config(format!("unknown prior {s:?} (expected gmm or conv)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub sampler: SamplerConfig,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub n_angles_full: usize,
    pub n_views: usize,
    /// 0 selects `ceil(sqrt(2) nx)`.
    pub n_detectors: usize,
    pub detector_spacing: f64,
    pub sigma_y: f64,
    pub prior: PriorKind,
    /// `(weight, mean, std)` per component.
    pub gmm: Vec<(f64, f64, f64)>,
    pub conv_weights: PathBuf,
    pub phantom: PathBuf,
    pub sinogram: PathBuf,
    pub reconstruction: PathBuf,
    /// Reference volume for trace PSNR and evaluation; empty means none
    /// (evaluation then falls back to `phantom`).
    pub ground_truth: PathBuf,
    pub trace: PathBuf,
    pub report: PathBuf,
    pub train_epochs: usize,
    pub train_steps_per_slice: usize,
    pub train_crop: usize,
    pub train_lr: f64,
    pub train_held_out_fraction: f64,
    pub train_eval_draws: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        RunConfig {
            sampler: SamplerConfig::default(),
            nx: 64,
            ny: 64,
            nz: 32,
            n_angles_full: 180,
            n_views: 8,
            n_detectors: 0,
            detector_spacing: 1.0,
            sigma_y: 0.1,
            prior: PriorKind::Gmm,
            gmm: vec![(0.55, 0.0, 0.02), (0.3, 0.2, 0.02), (0.05, 0.3, 0.02), (0.1, 1.0, 0.02)],
            conv_weights: "weights.raw".into(),
            phantom: "phantom.raw".into(),
            sinogram: "sinogram.raw".into(),
            reconstruction: "recon.raw".into(),
            ground_truth: PathBuf::new(),
            trace: "trace.csv".into(),
            report: "report.json".into(),
            train_epochs: train.epochs,
            train_steps_per_slice: train.steps_per_slice,
            train_crop: train.crop,
            train_lr: train.adam.lr,
            train_held_out_fraction: train.held_out_fraction,
            train_eval_draws: train.eval_draws,
        }
    }
}

/// Every recognised key, in the order written by [`RunConfig::to_text`].
pub const KEYS: &[&str] = &[
    "method",
    "seed",
    "n_steps",
    "inner_steps",
    "lr",
    "lambda",
    "lambda_z",
    "rho",
    "lambda_prime",
    "tau",
    "sigma",
    "extrapolation",
    "dds_admm_iters",
    "dds_rho",
    "cg_tol",
    "cg_max_iter",
    "record_wall_time",
    "nx",
    "ny",
    "nz",
    "n_angles_full",
    "n_views",
    "n_detectors",
    "detector_spacing",
    "sigma_y",
    "prior",
    "gmm",
    "conv_weights",
    "phantom",
    "sinogram",
    "reconstruction",
    "ground_truth",
    "trace",
    "report",
    "train_epochs",
    "train_steps_per_slice",
    "train_crop",
    "train_lr",
    "train_held_out_fraction",
    "train_eval_draws",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key} = {value:?}: {e}")))
}

fn parse_gmm(value: &str) -> Result<Vec<(f64, f64, f64)>> {
    value
        .split(',')
        .map(|part| {
            let fields: Vec<&str> = part.trim().split(':').collect();
            if fields.len() != 3 {
                return Err(Error::Config(format!(
                    "gmm component {part:?} must be weight:mean:std"
                )));
            }
            Ok((
                parse("gmm", fields[0].trim())?,
                parse("gmm", fields[1].trim())?,
                parse("gmm", fields[2].trim())?,
            ))
        })
        .collect()
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} must be key=value")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let s = &mut self.sampler;
        match key {
            "method" => s.method = value.parse()?,
            "seed" => s.seed = parse(key, value)?,
            "n_steps" => s.n_steps = parse(key, value)?,
            "inner_steps" => s.inner_steps = parse(key, value)?,
            "lr" => s.lr = parse(key, value)?,
            "lambda" => s.lambda = parse(key, value)?,
            "lambda_z" => s.lambda_z = parse(key, value)?,
            "rho" => s.rho = parse(key, value)?,
            "lambda_prime" => s.lambda_prime = parse(key, value)?,
            "tau" => s.tau = parse(key, value)?,
            "sigma" => s.sigma = parse(key, value)?,
            "extrapolation" => s.extrapolation = parse(key, value)?,
            "dds_admm_iters" => s.dds_admm_iters = parse(key, value)?,
            "dds_rho" => s.dds_rho = parse(key, value)?,
            "cg_tol" => s.cg.tol = parse(key, value)?,
            "cg_max_iter" => s.cg.max_iter = parse(key, value)?,
            "record_wall_time" => s.record_wall_time = parse(key, value)?,
            "nx" => self.nx = parse(key, value)?,
            "ny" => self.ny = parse(key, value)?,
            "nz" => self.nz = parse(key, value)?,
            "n_angles_full" => self.n_angles_full = parse(key, value)?,
            "n_views" => self.n_views = parse(key, value)?,
            "n_detectors" => self.n_detectors = parse(key, value)?,
            "detector_spacing" => self.detector_spacing = parse(key, value)?,
            "sigma_y" => self.sigma_y = parse(key, value)?,
            "prior" => self.prior = value.parse()?,
            "gmm" => self.gmm = parse_gmm(value)?,
            "conv_weights" => self.conv_weights = value.into(),
            "phantom" => self.phantom = value.into(),
            "sinogram" => self.sinogram = value.into(),
            "reconstruction" => self.reconstruction = value.into(),
            "ground_truth" => self.ground_truth = value.into(),
            "trace" => self.trace = value.into(),
            "report" => self.report = value.into(),
            "train_epochs" => self.train_epochs = parse(key, value)?,
            "train_steps_per_slice" => self.train_steps_per_slice = parse(key, value)?,
            "train_crop" => self.train_crop = parse(key, value)?,
            "train_lr" => self.train_lr = parse(key, value)?,
            "train_held_out_fraction" => self.train_held_out_fraction = parse(key, value)?,
            "train_eval_draws" => self.train_eval_draws = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Canonical string value of every key.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let s = &self.sampler;
        let path = |p: &PathBuf| p.display().to_string();
        let gmm = self
            .gmm
            .iter()
            .map(|(w, m, sd)| format!("{w}:{m}:{sd}"))
            .collect::<Vec<_>>()
            .join(",");
        let values: Vec<(&str, String)> = vec![
            ("method", s.method.to_string()),
            ("seed", s.seed.to_string()),
            ("n_steps", s.n_steps.to_string()),
            ("inner_steps", s.inner_steps.to_string()),
            ("lr", s.lr.to_string()),
            ("lambda", s.lambda.to_string()),
            ("lambda_z", s.lambda_z.to_string()),
            ("rho", s.rho.to_string()),
            ("lambda_prime", s.lambda_prime.to_string()),
            ("tau", s.tau.to_string()),
            ("sigma", s.sigma.to_string()),
            ("extrapolation", s.extrapolation.to_string()),
            ("dds_admm_iters", s.dds_admm_iters.to_string()),
            ("dds_rho", s.dds_rho.to_string()),
            ("cg_tol", s.cg.tol.to_string()),
            ("cg_max_iter", s.cg.max_iter.to_string()),
            ("record_wall_time", s.record_wall_time.to_string()),
            ("nx", self.nx.to_string()),
            ("ny", self.ny.to_string()),
            ("nz", self.nz.to_string()),
            ("n_angles_full", self.n_angles_full.to_string()),
            ("n_views", self.n_views.to_string()),
            ("n_detectors", self.n_detectors.to_string()),
            ("detector_spacing", self.detector_spacing.to_string()),
            ("sigma_y", self.sigma_y.to_string()),
            ("prior", self.prior.name().to_string()),
            ("gmm", gmm),
            ("conv_weights", path(&self.conv_weights)),
            ("phantom", path(&self.phantom)),
            ("sinogram", path(&self.sinogram)),
            ("reconstruction", path(&self.reconstruction)),
            ("ground_truth", path(&self.ground_truth)),
            ("trace", path(&self.trace)),
            ("report", path(&self.report)),
            ("train_epochs", self.train_epochs.to_string()),
            ("train_steps_per_slice", self.train_steps_per_slice.to_string()),
            ("train_crop", self.train_crop.to_string()),
            ("train_lr", self.train_lr.to_string()),
            ("train_held_out_fraction", self.train_held_out_fraction.to_string()),
            ("train_eval_draws", self.train_eval_draws.to_string()),
        ];
        values.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn to_text(&self) -> String {
        let map = self.to_map();
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", map[*k]))
            .collect()
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.nx, self.ny, self.nz)
    }

    pub fn geometry(&self) -> Result<ProjectionGeometry> {
        let n_det = if self.n_detectors == 0 {
            default_detectors(self.nx)
        } else {
            self.n_detectors
        };
        ProjectionGeometry::new(self.n_angles_full, n_det, self.detector_spacing)
    }

    pub fn views(&self) -> Result<ViewSubsampling> {
        ViewSubsampling::uniform(self.n_views, self.n_angles_full)
    }

    pub fn gmm_prior(&self) -> Result<GmmScalarPrior> {
        GmmScalarPrior::from_triples(&self.gmm)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train_epochs,
            steps_per_slice: self.train_steps_per_slice,
            crop: self.train_crop,
            adam: AdamConfig::with_lr(self.train_lr),
            held_out_fraction: self.train_held_out_fraction,
            eval_draws: self.train_eval_draws,
            seed: self.sampler.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(Error::param(format!("volume dimensions must be positive, got {}", self.dims())));
        }
        self.geometry()?;
        self.views()?;
        if !(self.sigma_y.is_finite() && self.sigma_y >= 0.0) {
            return Err(Error::param("sigma_y must be finite and >= 0"));
        }
        if self.prior == PriorKind::Gmm {
            self.gmm_prior()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::Method;
    use proptest::prelude::*;

    #[test]
    fn parses_comments_and_overrides() {
        let text = "# benchmark\nmethod = nerd-a  # solver\nlr=0.05\n\n gmm = 0.5:0:0.1, 0.5:1:0.1\n";
        let mut cfg = RunConfig::from_text(text).unwrap();
        assert_eq!(cfg.sampler.method, Method::NerdA);
        assert_eq!(cfg.sampler.lr, 0.05);
        assert_eq!(cfg.gmm, vec![(0.5, 0.0, 0.1), (0.5, 1.0, 0.1)]);
        cfg.apply_override("n_views=16").unwrap();
        assert_eq!(cfg.n_views, 16);
        assert_eq!(cfg.sampler.inner_steps, 10);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RunConfig::from_text("unknown = 1").is_err());
        assert!(RunConfig::from_text("lr").is_err());
        assert!(RunConfig::from_text("n_steps = -1").is_err());
        assert!(RunConfig::from_text("method = admm").is_err());
        assert!(RunConfig::from_text("gmm = 1:0").is_err());
        let mut cfg = RunConfig::default();
        assert!(cfg.apply_override("seed").is_err());
        cfg.nx = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn every_key_is_written() {
        let map = RunConfig::default().to_map();
        assert_eq!(map.len(), KEYS.len());
        for k in KEYS {
            assert!(map.contains_key(*k), "{k}");
        }
        assert!(RunConfig::default().validate().is_ok());
        assert_eq!(RunConfig::default().geometry().unwrap().n_detectors, 91);
    }

    proptest! {
        #[test]
        fn text_round_trip(
            lr in 1e-6f64..1.0,
            lz in 0.0f64..2.0,
            seed in any::<u64>(),
            n in 1usize..100,
            m in 0usize..4,
            w in 0.01f64..1.0,
            sd in 1e-3f64..1.0,
        ) {
            let mut cfg = RunConfig::default();
            cfg.sampler.lr = lr;
            cfg.sampler.lambda_z = lz;
            cfg.sampler.seed = seed;
            cfg.sampler.n_steps = n;
            cfg.sampler.method = Method::ALL[m];
            cfg.gmm = vec![(w, -lz, sd), (1.0 - w, lr, sd)];
            cfg.reconstruction = format!("out/r{n}.raw").into();
            let back = RunConfig::from_text(&cfg.to_text()).unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}
