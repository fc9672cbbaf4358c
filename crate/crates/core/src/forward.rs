//! Parallel-beam projection of axial slices, view subsampling, and the
//! composed measurement operator `A = P T`.
//!
//! Each ray is sampled at unit steps along its direction; every sample is a
//! bilinear interpolation of the slice (zero outside). The adjoint scatters
//! with exactly the same weights, so the pair passes the dot-product test to
//! rounding error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::GaussianStream;
use crate::volume::Volume3D;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionGeometry {
    pub n_angles_full: usize,
    pub n_detectors: usize,
    /// Detector bin pitch in voxel units; the detector is centered on the
    /// rotation axis.
    pub detector_spacing: f64,
}

impl ProjectionGeometry {
    pub fn new(n_angles_full: usize, n_detectors: usize, detector_spacing: f64) -> Result<Self> {
        let g = ProjectionGeometry {
            n_angles_full,
            n_detectors,
            detector_spacing,
        };
        g.validate()?;
        Ok(g)
    }

    /// 180 angles, `ceil(sqrt(2) * n)` bins at unit spacing.
    pub fn default_for(n: usize) -> Self {
        ProjectionGeometry {
            n_angles_full: 180,
            n_detectors: default_detectors(n),
            detector_spacing: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_angles_full == 0 {
            return Err(Error::param("n_angles_full must be >= 1"));
        }
        if self.n_detectors == 0 {
            return Err(Error::param("n_detectors must be >= 1"));
        }
        if !(self.detector_spacing.is_finite() && self.detector_spacing > 0.0) {
            return Err(Error::param("detector_spacing must be positive"));
        }
        Ok(())
    }

    pub fn angle(&self, index: usize) -> f64 {
        std::f64::consts::PI * index as f64 / self.n_angles_full as f64
    }

    pub fn angles(&self) -> Vec<f64> {
        (0..self.n_angles_full).map(|a| self.angle(a)).collect()
    }
}

pub fn default_detectors(n: usize) -> usize {
    (std::f64::consts::SQRT_2 * n as f64).ceil() as usize
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewSubsampling {
    selected: Vec<usize>,
}

impl ViewSubsampling {
    pub fn new(selected: Vec<usize>, n_angles_full: usize) -> Result<Self> {
        if selected.is_empty() {
            return Err(Error::param("view subsampling selects no views"));
        }
        if selected.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("selected views must be strictly increasing"));
        }
        if *selected.last().unwrap() >= n_angles_full {
            return Err(Error::param(format!(
                "selected view {} out of range 0..{n_angles_full}",
                selected.last().unwrap()
            )));
        }
        Ok(ViewSubsampling { selected })
    }

    /// `n_views` indices `v * n_full / n_views`, uniformly spread over the
    /// full set.
    pub fn uniform(n_views: usize, n_angles_full: usize) -> Result<Self> {
        if n_views == 0 || n_views > n_angles_full {
            return Err(Error::param(format!(
                "cannot select {n_views} of {n_angles_full} views"
            )));
        }
        Self::new(
            (0..n_views).map(|v| v * n_angles_full / n_views).collect(),
            n_angles_full,
        )
    }

    pub fn all(n_angles_full: usize) -> Self {
        ViewSubsampling {
            selected: (0..n_angles_full).collect(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.selected
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }
}

/// Measurements indexed by (view, detector, slice). Slice is the slowest
/// axis and detector the fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram3D {
    n_views: usize,
    n_detectors: usize,
    nz: usize,
    data: Vec<f64>,
}

impl Sinogram3D {
    pub fn zeros(n_views: usize, n_detectors: usize, nz: usize) -> Self {
        Sinogram3D {
            n_views,
            n_detectors,
            nz,
            data: vec![0.0; n_views * n_detectors * nz],
        }
    }

    pub fn from_vec(n_views: usize, n_detectors: usize, nz: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_views * n_detectors * nz {
            return Err(Error::shape(n_views * n_detectors * nz, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sinogram data".into()));
        }
        Ok(Sinogram3D {
            n_views,
            n_detectors,
            nz,
            data,
        })
    }

    pub fn n_views(&self) -> usize {
        self.n_views
    }

    pub fn n_detectors(&self) -> usize {
        self.n_detectors
    }

    pub fn nz(&self) -> usize {
        self.nz
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, view: usize, det: usize, k: usize) -> usize {
        (k * self.n_views + view) * self.n_detectors + det
    }

    #[inline]
    pub fn get(&self, view: usize, det: usize, k: usize) -> f64 {
        self.data[self.index(view, det, k)]
    }

    pub fn dot(&self, other: &Sinogram3D) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        Ok(crate::volume::dot(&self.data, &other.data))
    }

    pub fn l2_norm(&self) -> f64 {
        crate::volume::dot(&self.data, &self.data).sqrt()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n_views, self.n_detectors, self.nz)
    }

    /// Keeps only the selected views of a full-view sinogram (`P`).
    pub fn subsample(&self, views: &ViewSubsampling) -> Result<Sinogram3D> {
        if views.indices().iter().any(|&v| v >= self.n_views) {
            return Err(Error::param("subsampling index exceeds sinogram views"));
        }
        let mut out = Sinogram3D::zeros(views.len(), self.n_detectors, self.nz);
        for k in 0..self.nz {
            for (o, &v) in views.indices().iter().enumerate() {
                let src = self.index(v, 0, k);
                let dst = out.index(o, 0, k);
                out.data[dst..dst + self.n_detectors]
                    .copy_from_slice(&self.data[src..src + self.n_detectors]);
            }
        }
        Ok(out)
    }

    /// Zero-fill expansion back to all views (`Pᵀ`).
    pub fn expand(&self, views: &ViewSubsampling, n_angles_full: usize) -> Result<Sinogram3D> {
        if views.len() != self.n_views {
            return Err(Error::shape(views.len(), self.n_views));
        }
        let mut out = Sinogram3D::zeros(n_angles_full, self.n_detectors, self.nz);
        for k in 0..self.nz {
            for (o, &v) in views.indices().iter().enumerate() {
                let src = self.index(o, 0, k);
                let dst = out.index(v, 0, k);
                out.data[dst..dst + self.n_detectors]
                    .copy_from_slice(&self.data[src..src + self.n_detectors]);
            }
        }
        Ok(out)
    }
}

/// Interpolation weights of every ray for a set of angles, in CSR form.
/// Row `view * n_detectors + det`; columns index into one axial slice.
#[derive(Clone, Debug)]
struct RayTable {
    n: usize,
    n_rows: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl RayTable {
    fn build(n: usize, geom: &ProjectionGeometry, angle_indices: &[usize]) -> Self {
        let nd = geom.n_detectors;
        let center = (n as f64 - 1.0) / 2.0;
        let half_len = (n as f64 * std::f64::consts::SQRT_2 / 2.0).ceil() as i64 + 1;
        let mut row_ptr = Vec::with_capacity(angle_indices.len() * nd + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for &a in angle_indices {
            let theta = geom.angle(a);
            let (sin, cos) = theta.sin_cos();
            for d in 0..nd {
                let s = (d as f64 - (nd as f64 - 1.0) / 2.0) * geom.detector_spacing;
                for m in -half_len..=half_len {
                    let t = m as f64;
                    let px = center + s * cos - t * sin;
                    let py = center + s * sin + t * cos;
                    push_bilinear(n, px, py, &mut cols, &mut vals);
                }
                row_ptr.push(cols.len());
            }
        }
        RayTable {
            n,
            n_rows: angle_indices.len() * nd,
            row_ptr,
            cols,
            vals,
        }
    }

    fn project_slice(&self, slice: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate().take(self.n_rows) {
            let (lo, hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
            let mut acc = 0.0;
            for e in lo..hi {
                acc += self.vals[e] * slice[self.cols[e] as usize];
            }
            *o = acc;
        }
    }

    fn backproject_slice(&self, rows: &[f64], out: &mut [f64]) {
        for (r, &val) in rows.iter().enumerate().take(self.n_rows) {
            if val == 0.0 {
                continue;
            }
            for e in self.row_ptr[r]..self.row_ptr[r + 1] {
                out[self.cols[e] as usize] += self.vals[e] * val;
            }
        }
    }

    fn forward(&self, v: &Volume3D, n_views: usize, n_detectors: usize) -> Sinogram3D {
        let mut sino = Sinogram3D::zeros(n_views, n_detectors, v.nz());
        let rows = self.n_rows;
        for k in 0..v.nz() {
            self.project_slice(v.axial(k), &mut sino.data[k * rows..(k + 1) * rows]);
        }
        sino
    }

    fn adjoint(&self, s: &Sinogram3D) -> Volume3D {
        let mut vol = Volume3D::zeros(self.n, self.n, s.nz());
        let rows = self.n_rows;
        for k in 0..s.nz() {
            self.backproject_slice(&s.data[k * rows..(k + 1) * rows], vol.axial_mut(k));
        }
        vol
    }
}

fn push_bilinear(n: usize, px: f64, py: f64, cols: &mut Vec<u32>, vals: &mut Vec<f64>) {
    let x0 = px.floor();
    let y0 = py.floor();
    let fx = px - x0;
    let fy = py - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let n = n as i64;
    let corners = [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x0 + 1, y0, fx * (1.0 - fy)),
        (x0, y0 + 1, (1.0 - fx) * fy),
        (x0 + 1, y0 + 1, fx * fy),
    ];
    for (x, y, w) in corners {
        if x >= 0 && x < n && y >= 0 && y < n && w != 0.0 {
            cols.push((y * n + x) as u32);
            vals.push(w);
        }
    }
}

fn check_square(v: &Volume3D) -> Result<()> {
    if v.nx() != v.ny() {
        return Err(Error::param(format!(
            "projection needs square axial slices, got {}x{}",
            v.nx(),
            v.ny()
        )));
    }
    Ok(())
}

/// Full-view parallel-beam projection `T` of every axial slice.
pub fn radon_forward(v: &Volume3D, geom: &ProjectionGeometry) -> Result<Sinogram3D> {
    geom.validate()?;
    check_square(v)?;
    let all: Vec<usize> = (0..geom.n_angles_full).collect();
    let table = RayTable::build(v.nx(), geom, &all);
    Ok(table.forward(v, geom.n_angles_full, geom.n_detectors))
}

/// Exact transpose of [`radon_forward`] for slices of size `n x n`.
pub fn radon_adjoint(s: &Sinogram3D, geom: &ProjectionGeometry, n: usize) -> Result<Volume3D> {
    geom.validate()?;
    if s.n_views() != geom.n_angles_full || s.n_detectors() != geom.n_detectors {
        return Err(Error::shape(
            format!("{}x{} sinogram", geom.n_angles_full, geom.n_detectors),
            format!("{}x{}", s.n_views(), s.n_detectors()),
        ));
    }
    let all: Vec<usize> = (0..geom.n_angles_full).collect();
    let table = RayTable::build(n, geom, &all);
    Ok(table.adjoint(s))
}

/// A linear map from volumes to flat measurement vectors with its adjoint.
pub trait LinearOperator {
    fn domain(&self) -> crate::volume::Dims;
    fn range_len(&self) -> usize;
    fn apply(&self, v: &Volume3D) -> Result<Vec<f64>>;
    fn adjoint(&self, m: &[f64]) -> Result<Volume3D>;
}

/// `A = P T` for a fixed volume size, geometry and view selection.
#[derive(Clone, Debug)]
pub struct ForwardOperator {
    dims: crate::volume::Dims,
    geometry: ProjectionGeometry,
    views: ViewSubsampling,
    table: RayTable,
}

impl ForwardOperator {
    pub fn new(
        dims: crate::volume::Dims,
        geometry: ProjectionGeometry,
        views: ViewSubsampling,
    ) -> Result<Self> {
        geometry.validate()?;
        if dims.nx != dims.ny {
            return Err(Error::param(format!(
                "projection needs square axial slices, got {}x{}",
                dims.nx, dims.ny
            )));
        }
        if dims.is_empty() {
            return Err(Error::param("empty volume"));
        }
        if views.indices().iter().any(|&v| v >= geometry.n_angles_full) {
            return Err(Error::param("selected view outside geometry"));
        }
        let table = RayTable::build(dims.nx, &geometry, views.indices());
        Ok(ForwardOperator {
            dims,
            geometry,
            views,
            table,
        })
    }

    pub fn geometry(&self) -> &ProjectionGeometry {
        &self.geometry
    }

    pub fn views(&self) -> &ViewSubsampling {
        &self.views
    }

    pub fn dims(&self) -> crate::volume::Dims {
        self.dims
    }

    pub fn apply_a(&self, v: &Volume3D) -> Result<Sinogram3D> {
        if v.dims() != self.dims {
            return Err(Error::shape(self.dims, v.dims()));
        }
        Ok(self
            .table
            .forward(v, self.views.len(), self.geometry.n_detectors))
    }

    pub fn apply_at(&self, s: &Sinogram3D) -> Result<Volume3D> {
        let expected = (self.views.len(), self.geometry.n_detectors, self.dims.nz);
        if s.shape() != expected {
            return Err(Error::shape(format!("{expected:?}"), format!("{:?}", s.shape())));
        }
        Ok(self.table.adjoint(s))
    }

    pub fn empty_sinogram(&self) -> Sinogram3D {
        Sinogram3D::zeros(self.views.len(), self.geometry.n_detectors, self.dims.nz)
    }

    pub fn sinogram_from_vec(&self, data: Vec<f64>) -> Result<Sinogram3D> {
        Sinogram3D::from_vec(self.views.len(), self.geometry.n_detectors, self.dims.nz, data)
    }
}

impl LinearOperator for ForwardOperator {
    fn domain(&self) -> crate::volume::Dims {
        self.dims
    }

    fn range_len(&self) -> usize {
        self.views.len() * self.geometry.n_detectors * self.dims.nz
    }

    fn apply(&self, v: &Volume3D) -> Result<Vec<f64>> {
        Ok(self.apply_a(v)?.into_vec())
    }

    fn adjoint(&self, m: &[f64]) -> Result<Volume3D> {
        let s = self.sinogram_from_vec(m.to_vec())?;
        self.apply_at(&s)
    }
}

/// `Aᵀy` rescaled to `[0, 1]` (all zeros when `Aᵀy` is constant); the
/// unregularized reference reconstruction.
pub fn normalized_adjoint(op: &ForwardOperator, y: &Sinogram3D) -> Result<Volume3D> {
    let back = op.apply_at(y)?;
    let (lo, hi) = back
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi > lo {
        Ok(back.map(|v| (v - lo) / (hi - lo)))
    } else {
        Ok(back.zeros_like())
    }
}

/// The identity map, for surrogate problems.
#[derive(Clone, Copy, Debug)]
pub struct IdentityOperator {
    pub dims: crate::volume::Dims,
}

impl LinearOperator for IdentityOperator {
    fn domain(&self) -> crate::volume::Dims {
        self.dims
    }

    fn range_len(&self) -> usize {
        self.dims.len()
    }

    fn apply(&self, v: &Volume3D) -> Result<Vec<f64>> {
        if v.dims() != self.dims {
            return Err(Error::shape(self.dims, v.dims()));
        }
        Ok(v.data().to_vec())
    }

    fn adjoint(&self, m: &[f64]) -> Result<Volume3D> {
        Volume3D::from_vec(self.dims.nx, self.dims.ny, self.dims.nz, m.to_vec())
    }
}

/// Adds i.i.d. `N(0, sigma_y²)` noise in storage order from a
/// [`GaussianStream`] seeded with `seed`.
pub fn add_gaussian_noise(s: &Sinogram3D, sigma_y: f64, seed: u64) -> Result<Sinogram3D> {
    if !(sigma_y.is_finite() && sigma_y >= 0.0) {
        return Err(Error::param("sigma_y must be finite and >= 0"));
    }
    let mut out = s.clone();
    if sigma_y == 0.0 {
        return Ok(out);
    }
    let mut rng = GaussianStream::new(seed);
    for v in out.data.iter_mut() {
        *v += sigma_y * rng.next_gaussian();
    }
    Ok(out)
}
