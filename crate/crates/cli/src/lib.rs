//! The `nerd` command line: phantom generation, measurement simulation,
//! reconstruction, evaluation and denoiser training.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime or
//! numeric failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nerd_core::config::{PriorKind, RunConfig};
use nerd_core::forward::{add_gaussian_noise, ForwardOperator, ProjectionGeometry};
use nerd_core::io::{self, Provenance, ScheduleMeta, WeightsMeta};
use nerd_core::metrics::evaluate_volume;
use nerd_core::phantom::shepp_logan_3d;
use nerd_core::priors::{train_denoiser, ConvDenoiser, Denoiser, NoiseSchedule};
use nerd_core::samplers::{run_sampler, trace_to_csv, Problem, SamplerOutput};
use nerd_core::volume::{Axis, Volume3D};

#[derive(Debug, Parser)]
#[command(name = "nerd", version, about = "Network-regularized diffusion sampling for sparse-view 3D CT")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every subcommand.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct RunArgs {
    /// Flat key = value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Primary output file of the command.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-key override, repeatable; later ones win.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Clone, Debug, Subcommand)]
pub enum Command {
    /// Write the 3D Shepp-Logan phantom.
    GeneratePhantom(RunArgs),
    /// Project the phantom and add measurement noise.
    Simulate(RunArgs),
    /// Run the configured sampler on a sinogram.
    Reconstruct(RunArgs),
    /// Slice-wise PSNR/SSIM of a reconstruction.
    Evaluate(RunArgs),
    /// Train the convolutional denoiser on phantom slices.
    TrainDenoiser(RunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GeneratePhantom(_) => "generate-phantom",
            Command::Simulate(_) => "simulate",
            Command::Reconstruct(_) => "reconstruct",
            Command::Evaluate(_) => "evaluate",
            Command::TrainDenoiser(_) => "train-denoiser",
        }
    }

    pub fn args(&self) -> &RunArgs {
        match self {
            Command::GeneratePhantom(a)
            | Command::Simulate(a)
            | Command::Reconstruct(a)
            | Command::Evaluate(a)
            | Command::TrainDenoiser(a) => a,
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn context<'a>(what: &'static str, path: &'a Path) -> impl Fn(nerd_core::Error) -> CliError + 'a {
    move |e| CliError::Runtime(format!("{what} {}: {e}", path.display()))
}

/// Parses arguments and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(msg) => {
            println!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("nerd {}: {}", cli.command.name(), e.message());
            e.exit_code()
        }
    }
}

/// Config file, then `--set` overrides, then the dedicated flags.
pub fn resolve_config(cli: &RunArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p).map_err(usage)?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        cfg.apply_override(o).map_err(usage)?;
    }
    if let Some(m) = &cli.method {
        cfg.set("method", m).map_err(usage)?;
    }
    if let Some(s) = cli.seed {
        cfg.sampler.seed = s;
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<String, CliError> {
    let args = cli.command.args();
    let cfg = resolve_config(args)?;
    let out = args.out.clone();
    match cli.command {
        Command::GeneratePhantom(_) => generate_phantom(&cfg, out),
        Command::Simulate(_) => simulate(&cfg, out),
        Command::Reconstruct(_) => reconstruct(&cfg, out),
        Command::Evaluate(_) => evaluate(&cfg, out),
        Command::TrainDenoiser(_) => train(&cfg, out),
    }
}

fn provenance(cfg: &RunConfig, command: &str, generator: &str, seed: Option<u64>) -> Provenance {
    Provenance {
        command: command.into(),
        generator: generator.into(),
        seed,
        config: cfg.to_map(),
    }
}

fn require_input(path: &Path, what: &str) -> Result<(), CliError> {
    if !path.is_file() {
        return Err(usage(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

fn write_text_with_sidecar(path: &Path, text: &str, prov: &Provenance) -> Result<(), CliError> {
    write_text(path, text)?;
    let mut side = serde_json::to_string_pretty(prov).map_err(runtime)?;
    side.push('\n');
    write_text(&io::sidecar_path(path), &side)
}

pub fn generate_phantom(cfg: &RunConfig, out: Option<PathBuf>) -> Result<String, CliError> {
    let path = out.unwrap_or_else(|| cfg.phantom.clone());
    let v = shepp_logan_3d(cfg.nx, cfg.ny, cfg.nz).map_err(usage)?;
    let prov = provenance(cfg, "generate-phantom", "shepp-logan-3d", None);
    io::save_volume(&path, &v, prov).map_err(context("cannot write", &path))?;
    Ok(format!("wrote {} ({})", path.display(), v.dims()))
}

fn operator_for(dims: nerd_core::volume::Dims, geometry: ProjectionGeometry, cfg: &RunConfig) -> Result<ForwardOperator, CliError> {
    ForwardOperator::new(dims, geometry, cfg.views().map_err(usage)?).map_err(runtime)
}

pub fn simulate(cfg: &RunConfig, out: Option<PathBuf>) -> Result<String, CliError> {
    require_input(&cfg.phantom, "phantom")?;
    let path = out.unwrap_or_else(|| cfg.sinogram.clone());
    let (v, _) = io::load_volume(&cfg.phantom).map_err(context("cannot read", &cfg.phantom))?;
    let mut geometry = cfg.geometry().map_err(usage)?;
    if cfg.n_detectors == 0 {
        geometry.n_detectors = nerd_core::forward::default_detectors(v.nx());
    }
    let op = operator_for(v.dims(), geometry, cfg)?;
    let clean = op.apply_a(&v).map_err(runtime)?;
    let seed = cfg.sampler.seed;
    let y = add_gaussian_noise(&clean, cfg.sigma_y, seed).map_err(runtime)?;
    let prov = provenance(cfg, "simulate", "parallel-beam", Some(seed));
    io::save_sinogram(&path, &y, v.dims(), op.geometry(), op.views(), cfg.sigma_y, seed, prov)
        .map_err(context("cannot write", &path))?;
    Ok(format!(
        "wrote {} ({} views x {} detectors x {} slices)",
        path.display(),
        y.n_views(),
        y.n_detectors(),
        y.nz()
    ))
}

/// The configured denoiser: the GMM prior or trained conv weights.
pub fn load_denoiser(cfg: &RunConfig) -> Result<Box<dyn Denoiser>, CliError> {
    match cfg.prior {
        PriorKind::Gmm => Ok(Box::new(cfg.gmm_prior().map_err(usage)?)),
        PriorKind::Conv => {
            require_input(&cfg.conv_weights, "conv weights")?;
            let (net, _) = io::load_weights(&cfg.conv_weights).map_err(context("cannot read", &cfg.conv_weights))?;
            Ok(Box::new(net))
        }
    }
}

fn ground_truth(cfg: &RunConfig) -> Result<Option<Volume3D>, CliError> {
    if cfg.ground_truth.as_os_str().is_empty() {
        return Ok(None);
    }
    require_input(&cfg.ground_truth, "ground truth")?;
    let (v, _) = io::load_volume(&cfg.ground_truth).map_err(context("cannot read", &cfg.ground_truth))?;
    Ok(Some(v))
}

/// Runs the configured sampler on the sinogram named in `cfg`.
pub fn reconstruct_in_memory(cfg: &RunConfig) -> Result<SamplerOutput, CliError> {
    require_input(&cfg.sinogram, "sinogram")?;
    let (y, meta) = io::load_sinogram(&cfg.sinogram).map_err(context("cannot read", &cfg.sinogram))?;
    let geometry = meta.geometry().map_err(runtime)?;
    let views = meta.views().map_err(runtime)?;
    let op = ForwardOperator::new(meta.volume_dims(), geometry, views).map_err(runtime)?;
    let truth = ground_truth(cfg)?;
    if let Some(t) = &truth {
        if t.dims() != meta.volume_dims() {
            return Err(runtime(format!(
                "ground truth is {}, sinogram describes {}",
                t.dims(),
                meta.volume_dims()
            )));
        }
    }
    let denoiser = load_denoiser(cfg)?;
    let schedule = NoiseSchedule::ddpm(cfg.sampler.n_steps).map_err(usage)?;
    let problem = Problem {
        op: &op,
        y: y.data(),
        denoiser: denoiser.as_ref(),
        schedule: &schedule,
        ground_truth: truth.as_ref(),
    };
    run_sampler(cfg.sampler.clone(), problem).map_err(runtime)
}

pub fn reconstruct(cfg: &RunConfig, out: Option<PathBuf>) -> Result<String, CliError> {
    let path = out.unwrap_or_else(|| cfg.reconstruction.clone());
    let output = reconstruct_in_memory(cfg)?;
    let seed = Some(cfg.sampler.seed);
    let prov = provenance(cfg, "reconstruct", cfg.sampler.method.name(), seed);
    io::save_volume(&path, &output.reconstruction, prov.clone()).map_err(context("cannot write", &path))?;
    write_text_with_sidecar(&cfg.trace, &trace_to_csv(&output.trace), &prov)?;
    let last = output.trace.last().expect("at least one step");
    Ok(format!(
        "wrote {} and {} ({} steps, final residual {:.4}, tv_z {:.4})",
        path.display(),
        cfg.trace.display(),
        output.trace.len(),
        last.data_residual,
        last.tv_z
    ))
}

pub fn evaluate(cfg: &RunConfig, out: Option<PathBuf>) -> Result<String, CliError> {
    let path = out.unwrap_or_else(|| cfg.report.clone());
    let truth_path = if cfg.ground_truth.as_os_str().is_empty() {
        &cfg.phantom
    } else {
        &cfg.ground_truth
    };
    require_input(&cfg.reconstruction, "reconstruction")?;
    require_input(truth_path, "ground truth")?;
    let (est, est_meta) = io::load_volume(&cfg.reconstruction).map_err(context("cannot read", &cfg.reconstruction))?;
    let (truth, _) = io::load_volume(truth_path).map_err(context("cannot read", truth_path))?;
    let mut report = evaluate_volume(&est, &truth).map_err(runtime)?;
    report.seed = est_meta.provenance.seed;
    report.config = cfg.to_map();
    let text = if path.extension().is_some_and(|e| e == "csv") {
        report.to_csv()
    } else {
        let mut t = report.to_json().map_err(runtime)?;
        t.push('\n');
        t
    };
    let prov = provenance(cfg, "evaluate", "slice-wise psnr/ssim", est_meta.provenance.seed);
    write_text_with_sidecar(&path, &text, &prov)?;
    let axial = report.view(Axis::Axial).expect("axial view");
    Ok(format!(
        "wrote {} (axial PSNR {} dB)",
        path.display(),
        nerd_core::metrics::fmt_metric(axial.psnr_mean)
    ))
}

pub fn train(cfg: &RunConfig, out: Option<PathBuf>) -> Result<String, CliError> {
    require_input(&cfg.phantom, "phantom")?;
    let path = out.unwrap_or_else(|| cfg.conv_weights.clone());
    let (v, _) = io::load_volume(&cfg.phantom).map_err(context("cannot read", &cfg.phantom))?;
    let slices: Vec<_> = (0..v.nz())
        .map(|k| v.slice(Axis::Axial, k).expect("slice in range"))
        .filter(|s| s.data.iter().any(|&x| x != 0.0))
        .collect();
    let schedule = NoiseSchedule::ddpm(1).map_err(runtime)?;
    let tc = cfg.train_config();
    let (net, report) = train_denoiser(&slices, &schedule, &tc).map_err(runtime)?;
    let mut training = BTreeMap::new();
    training.insert("held_out_loss".to_string(), report.held_out_loss);
    training.insert("baseline_loss".to_string(), report.baseline_loss);
    training.insert("n_train".to_string(), report.n_train as f64);
    training.insert("n_held_out".to_string(), report.n_held_out as f64);
    if let Some(&l) = report.loss_history.last() {
        training.insert("final_train_loss".to_string(), l);
    }
    let meta = WeightsMeta {
        layers: WeightsMeta::conv_layers(),
        param_count: ConvDenoiser::param_count(),
        dtype: io::DTYPE.into(),
        schedule: ScheduleMeta {
            kind: "linear".into(),
            t_max: schedule.t_max(),
            beta_start: 1e-4,
            beta_end: 0.02,
        },
        training_seed: tc.seed,
        training,
        provenance: provenance(cfg, "train-denoiser", "conv-denoiser", Some(tc.seed)),
    };
    io::save_weights(&path, &net, &meta).map_err(context("cannot write", &path))?;
    Ok(format!(
        "wrote {} (held-out loss {:.5}, baseline {:.5})",
        path.display(),
        report.held_out_loss,
        report.baseline_loss
    ))
}
