//! Python bindings. Volumes are `(nz, ny, nx)` float64 arrays and sinograms
//! `(nz, n_views, n_detectors)`, both C-ordered.

use numpy::ndarray::{Array2, Array3, ArrayD, IxDyn};
use numpy::{IntoPyArray, PyArray2, PyArray3, PyArrayDyn, PyReadonlyArray2, PyReadonlyArray3, PyReadonlyArrayDyn};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use nerd_core::config::{PriorKind, RunConfig};
use nerd_core::forward::{self, ProjectionGeometry, Sinogram3D, ViewSubsampling};
use nerd_core::priors::{Denoiser, GmmScalarPrior, NoiseSchedule};
use nerd_core::samplers::{run_sampler, Problem};
use nerd_core::volume::{self, Image2D, Volume3D};
use nerd_core::{io, metrics, optim, phantom};

fn err(e: nerd_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_volume(a: PyReadonlyArray3<'_, f64>) -> PyResult<Volume3D> {
    let a = a.as_array();
    let (nz, ny, nx) = a.dim();
    Volume3D::from_vec(nx, ny, nz, a.iter().copied().collect()).map_err(err)
}

fn from_volume(py: Python<'_>, v: Volume3D) -> Bound<'_, PyArray3<f64>> {
    let shape = (v.nz(), v.ny(), v.nx());
    Array3::from_shape_vec(shape, v.into_vec()).expect("volume shape").into_pyarray(py)
}

fn to_sinogram(a: PyReadonlyArray3<'_, f64>) -> PyResult<Sinogram3D> {
    let a = a.as_array();
    let (nz, n_views, n_det) = a.dim();
    Sinogram3D::from_vec(n_views, n_det, nz, a.iter().copied().collect()).map_err(err)
}

fn from_sinogram(py: Python<'_>, s: Sinogram3D) -> Bound<'_, PyArray3<f64>> {
    let (n_views, n_det, nz) = s.shape();
    Array3::from_shape_vec((nz, n_views, n_det), s.into_vec()).expect("sinogram shape").into_pyarray(py)
}

fn to_image(a: PyReadonlyArray2<'_, f64>) -> PyResult<Image2D> {
    let a = a.as_array();
    let (h, w) = a.dim();
    Image2D::from_vec(w, h, a.iter().copied().collect()).map_err(err)
}

fn map_dyn<'py>(
    py: Python<'py>,
    a: PyReadonlyArrayDyn<'py, f64>,
    f: impl FnOnce(&[f64]) -> Vec<f64>,
) -> Bound<'py, PyArrayDyn<f64>> {
    let a = a.as_array();
    let shape = a.shape().to_vec();
    let flat: Vec<f64> = a.iter().copied().collect();
    ArrayD::from_shape_vec(IxDyn(&shape), f(&flat)).expect("same shape").into_pyarray(py)
}

fn json<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

#[pyfunction]
fn shepp_logan_3d(py: Python<'_>, nx: usize, ny: usize, nz: usize) -> PyResult<Bound<'_, PyArray3<f64>>> {
    Ok(from_volume(py, phantom::shepp_logan_3d(nx, ny, nz).map_err(err)?))
}

/// Parallel-beam projector restricted to `n_views` uniformly spaced angles.
#[pyclass(frozen)]
struct ForwardOperator {
    inner: forward::ForwardOperator,
}

#[pymethods]
impl ForwardOperator {
    #[new]
    #[pyo3(signature = (nx, ny, nz, n_views, n_angles_full=180, n_detectors=None, detector_spacing=1.0))]
    fn new(
        nx: usize,
        ny: usize,
        nz: usize,
        n_views: usize,
        n_angles_full: usize,
        n_detectors: Option<usize>,
        detector_spacing: f64,
    ) -> PyResult<Self> {
        let n_det = n_detectors.unwrap_or_else(|| forward::default_detectors(nx));
        let geom = ProjectionGeometry::new(n_angles_full, n_det, detector_spacing).map_err(err)?;
        let views = ViewSubsampling::uniform(n_views, n_angles_full).map_err(err)?;
        let inner = forward::ForwardOperator::new(volume::Dims::new(nx, ny, nz), geom, views).map_err(err)?;
        Ok(ForwardOperator { inner })
    }

    #[getter]
    fn view_indices(&self) -> Vec<usize> {
        self.inner.views().indices().to_vec()
    }

    fn apply<'py>(&self, py: Python<'py>, volume: PyReadonlyArray3<'py, f64>) -> PyResult<Bound<'py, PyArray3<f64>>> {
        let s = self.inner.apply_a(&to_volume(volume)?).map_err(err)?;
        Ok(from_sinogram(py, s))
    }

    fn adjoint<'py>(&self, py: Python<'py>, sinogram: PyReadonlyArray3<'py, f64>) -> PyResult<Bound<'py, PyArray3<f64>>> {
        let v = self.inner.apply_at(&to_sinogram(sinogram)?).map_err(err)?;
        Ok(from_volume(py, v))
    }

    /// `Aᵀy` rescaled to [0, 1].
    fn normalized_adjoint<'py>(
        &self,
        py: Python<'py>,
        sinogram: PyReadonlyArray3<'py, f64>,
    ) -> PyResult<Bound<'py, PyArray3<f64>>> {
        let v = forward::normalized_adjoint(&self.inner, &to_sinogram(sinogram)?).map_err(err)?;
        Ok(from_volume(py, v))
    }
}

#[pyfunction]
fn add_gaussian_noise<'py>(
    py: Python<'py>,
    sinogram: PyReadonlyArray3<'py, f64>,
    sigma_y: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyArray3<f64>>> {
    let s = forward::add_gaussian_noise(&to_sinogram(sinogram)?, sigma_y, seed).map_err(err)?;
    Ok(from_sinogram(py, s))
}

/// Voxel-wise Gaussian-mixture prior with a closed-form posterior mean.
#[pyclass(frozen)]
struct GmmPrior {
    inner: GmmScalarPrior,
}

#[pymethods]
impl GmmPrior {
    /// `components` is a list of `(weight, mean, std)`.
    #[new]
    fn new(components: Vec<(f64, f64, f64)>) -> PyResult<Self> {
        Ok(GmmPrior { inner: GmmScalarPrior::from_triples(&components).map_err(err)? })
    }

    fn posterior_mean(&self, x: f64, alpha_bar: f64) -> f64 {
        self.inner.posterior_mean(x, alpha_bar)
    }

    fn denoise<'py>(
        &self,
        py: Python<'py>,
        x: PyReadonlyArray3<'py, f64>,
        alpha_bar: f64,
    ) -> PyResult<Bound<'py, PyArray3<f64>>> {
        let v = self.inner.denoise(&to_volume(x)?, alpha_bar).map_err(err)?;
        Ok(from_volume(py, v))
    }
}

/// Runs a sampler on `sinogram`. `config` holds `key = value` lines in the
/// command-line config format; the geometry keys must describe the sinogram.
/// Returns `(reconstruction, trace)` with the trace as a list of dicts.
#[pyfunction]
#[pyo3(signature = (sinogram, config="", ground_truth=None))]
fn reconstruct<'py>(
    py: Python<'py>,
    sinogram: PyReadonlyArray3<'py, f64>,
    config: &str,
    ground_truth: Option<PyReadonlyArray3<'py, f64>>,
) -> PyResult<(Bound<'py, PyArray3<f64>>, Vec<Bound<'py, PyDict>>)> {
    let cfg = RunConfig::from_text(config).map_err(err)?;
    cfg.validate().map_err(err)?;
    let y = to_sinogram(sinogram)?;
    let op = forward::ForwardOperator::new(cfg.dims(), cfg.geometry().map_err(err)?, cfg.views().map_err(err)?)
        .map_err(err)?;
    if y.shape() != op.empty_sinogram().shape() {
        return Err(PyValueError::new_err(format!(
            "sinogram shape {:?} does not match the configured geometry {:?}",
            y.shape(),
            op.empty_sinogram().shape()
        )));
    }
    let truth = ground_truth.map(to_volume).transpose()?;
    let denoiser: Box<dyn Denoiser> = match cfg.prior {
        PriorKind::Gmm => Box::new(cfg.gmm_prior().map_err(err)?),
        PriorKind::Conv => Box::new(io::load_weights(&cfg.conv_weights).map_err(err)?.0),
    };
    let schedule = NoiseSchedule::ddpm(cfg.sampler.n_steps).map_err(err)?;
    let problem = Problem {
        op: &op,
        y: y.data(),
        denoiser: denoiser.as_ref(),
        schedule: &schedule,
        ground_truth: truth.as_ref(),
    };
    let out = run_sampler(cfg.sampler.clone(), problem).map_err(err)?;
    let trace = out
        .trace
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("step", r.step)?;
            d.set_item("t_index", r.t_index)?;
            d.set_item("data_residual", r.data_residual)?;
            d.set_item("tv_z", r.tv_z)?;
            d.set_item("psnr", r.psnr)?;
            d.set_item("wall_ms", r.wall_ms)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok((from_volume(py, out.reconstruction), trace))
}

/// Slice-wise PSNR/SSIM over the axial, coronal and sagittal views, as a dict.
#[pyfunction]
fn evaluate_volume<'py>(
    py: Python<'py>,
    estimate: PyReadonlyArray3<'py, f64>,
    truth: PyReadonlyArray3<'py, f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let report = metrics::evaluate_volume(&to_volume(estimate)?, &to_volume(truth)?).map_err(err)?;
    json(py, &report.to_json().map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (estimate, truth, data_range=1.0))]
fn psnr(estimate: PyReadonlyArrayDyn<'_, f64>, truth: PyReadonlyArrayDyn<'_, f64>, data_range: f64) -> PyResult<f64> {
    let (e, t) = (estimate.as_array(), truth.as_array());
    if e.shape() != t.shape() {
        return Err(PyValueError::new_err("estimate and truth shapes differ"));
    }
    let e: Vec<f64> = e.iter().copied().collect();
    let t: Vec<f64> = t.iter().copied().collect();
    metrics::psnr(&e, &t, data_range).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (estimate, truth, data_range=1.0))]
fn ssim(estimate: PyReadonlyArray2<'_, f64>, truth: PyReadonlyArray2<'_, f64>, data_range: f64) -> PyResult<f64> {
    metrics::ssim_2d(&to_image(estimate)?, &to_image(truth)?, data_range).map_err(err)
}

#[pyfunction]
fn soft_threshold<'py>(py: Python<'py>, v: PyReadonlyArrayDyn<'py, f64>, kappa: f64) -> Bound<'py, PyArrayDyn<f64>> {
    map_dyn(py, v, |x| optim::soft_threshold(x, kappa))
}

#[pyfunction]
fn project_linf_ball<'py>(py: Python<'py>, u: PyReadonlyArrayDyn<'py, f64>) -> Bound<'py, PyArrayDyn<f64>> {
    map_dyn(py, u, optim::project_linf_ball)
}

#[pyfunction]
fn dz_forward<'py>(py: Python<'py>, v: PyReadonlyArray3<'py, f64>) -> PyResult<Bound<'py, PyArray3<f64>>> {
    Ok(from_volume(py, volume::dz_forward(&to_volume(v)?)))
}

#[pyfunction]
fn dz_adjoint<'py>(py: Python<'py>, g: PyReadonlyArray3<'py, f64>) -> PyResult<Bound<'py, PyArray3<f64>>> {
    Ok(from_volume(py, volume::dz_adjoint(&to_volume(g)?)))
}

#[pyfunction]
fn tv_z(v: PyReadonlyArray3<'_, f64>) -> PyResult<f64> {
    Ok(volume::tv_z(&to_volume(v)?))
}

/// A 2D slice of `volume` along `axis` ("axial", "coronal" or "sagittal").
#[pyfunction]
fn slice<'py>(py: Python<'py>, v: PyReadonlyArray3<'py, f64>, axis: &str, index: usize) -> PyResult<Bound<'py, PyArray2<f64>>> {
    let axis = match axis {
        "axial" => volume::Axis::Axial,
        "coronal" => volume::Axis::Coronal,
        "sagittal" => volume::Axis::Sagittal,
        other => return Err(PyValueError::new_err(format!("unknown axis {other:?}"))),
    };
    let img = to_volume(v)?.slice(axis, index).map_err(err)?;
    let (w, h) = (img.width, img.height);
    Ok(Array2::from_shape_vec((h, w), img.data).expect("slice shape").into_pyarray(py))
}

#[pymodule]
fn nerd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<ForwardOperator>()?;
    m.add_class::<GmmPrior>()?;
    m.add_function(wrap_pyfunction!(shepp_logan_3d, m)?)?;
    m.add_function(wrap_pyfunction!(add_gaussian_noise, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_volume, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(soft_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(project_linf_ball, m)?)?;
    m.add_function(wrap_pyfunction!(dz_forward, m)?)?;
    m.add_function(wrap_pyfunction!(dz_adjoint, m)?)?;
    m.add_function(wrap_pyfunction!(tv_z, m)?)?;
    m.add_function(wrap_pyfunction!(slice, m)?)?;
    Ok(())
}
