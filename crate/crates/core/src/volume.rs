//! Dense 3D volumes, axis slicing, and the z-axis finite-difference operator.
//!
//! Voxel `(i, j, k)` (x, y, z) lives at `k * ny * nx + j * nx + i`, so every
//! axial slice is a contiguous `nx * ny` block.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Volume3D {
    nx: usize,
    ny: usize,
    nz: usize,
    data: Vec<f64>,
}

/// Grid extents of a volume, `(nx, ny, nz)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Dims { nx, ny, nz }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// Fixed z; slice is `nx` wide and `ny` tall.
    Axial,
    /// Fixed y; slice is `nx` wide and `nz` tall.
    Coronal,
    /// Fixed x; slice is `ny` wide and `nz` tall.
    Sagittal,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Axial, Axis::Coronal, Axis::Sagittal];

    pub fn name(self) -> &'static str {
        match self {
            Axis::Axial => "axial",
            Axis::Coronal => "coronal",
            Axis::Sagittal => "sagittal",
        }
    }
}

/// A 2D real grid, row-major with the first axis fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Image2D {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image2D {
    pub fn zeros(width: usize, height: usize) -> Self {
        Image2D {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(width * height, data.len()));
        }
        Ok(Image2D { width, height, data })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

impl Volume3D {
    pub fn zeros(nx: usize, ny: usize, nz: usize) -> Self {
        Volume3D {
            nx,
            ny,
            nz,
            data: vec![0.0; nx * ny * nz],
        }
    }

    pub fn filled(nx: usize, ny: usize, nz: usize, value: f64) -> Self {
        Volume3D {
            nx,
            ny,
            nz,
            data: vec![value; nx * ny * nz],
        }
    }

    /// Builds a volume from raw voxel data, rejecting wrong lengths, empty
    /// grids and non-finite values.
    pub fn from_vec(nx: usize, ny: usize, nz: usize, data: Vec<f64>) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::param(format!(
                "volume dimensions must be positive, got {nx}x{ny}x{nz}"
            )));
        }
        if data.len() != nx * ny * nz {
            return Err(Error::shape(nx * ny * nz, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("volume data".into()));
        }
        Ok(Volume3D { nx, ny, nz, data })
    }

    pub fn from_fn(nx: usize, ny: usize, nz: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(nx * ny * nz);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    data.push(f(i, j, k));
                }
            }
        }
        Volume3D { nx, ny, nz, data }
    }

    pub fn zeros_like(&self) -> Self {
        Volume3D::zeros(self.nx, self.ny, self.nz)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn nz(&self) -> usize {
        self.nz
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.nx, self.ny, self.nz)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.ny + j) * self.nx + i
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        let idx = self.index(i, j, k);
        self.data[idx] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Errors with `context` in the message if any voxel is NaN or infinite.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    pub fn check_same_dims(&self, other: &Volume3D) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape(self.dims(), other.dims()));
        }
        Ok(())
    }

    /// Contiguous view of axial slice `k`.
    pub fn axial(&self, k: usize) -> &[f64] {
        let n = self.nx * self.ny;
        &self.data[k * n..(k + 1) * n]
    }

    pub fn axial_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.nx * self.ny;
        &mut self.data[k * n..(k + 1) * n]
    }

    pub fn extent(&self, axis: Axis) -> usize {
        match axis {
            Axis::Axial => self.nz,
            Axis::Coronal => self.ny,
            Axis::Sagittal => self.nx,
        }
    }

    fn slice_shape(&self, axis: Axis) -> (usize, usize) {
        match axis {
            Axis::Axial => (self.nx, self.ny),
            Axis::Coronal => (self.nx, self.nz),
            Axis::Sagittal => (self.ny, self.nz),
        }
    }

    #[inline]
    fn slice_voxel(&self, axis: Axis, index: usize, a: usize, b: usize) -> usize {
        match axis {
            Axis::Axial => self.index(a, b, index),
            Axis::Coronal => self.index(a, index, b),
            Axis::Sagittal => self.index(index, a, b),
        }
    }

    pub fn slice(&self, axis: Axis, index: usize) -> Result<Image2D> {
        let extent = self.extent(axis);
        if index >= extent {
            return Err(Error::param(format!(
                "{} slice index {index} out of range 0..{extent}",
                axis.name()
            )));
        }
        let (w, h) = self.slice_shape(axis);
        let mut out = Vec::with_capacity(w * h);
        for b in 0..h {
            for a in 0..w {
                out.push(self.data[self.slice_voxel(axis, index, a, b)]);
            }
        }
        Ok(Image2D {
            width: w,
            height: h,
            data: out,
        })
    }

    pub fn set_slice(&mut self, axis: Axis, index: usize, image: &Image2D) -> Result<()> {
        let extent = self.extent(axis);
        if index >= extent {
            return Err(Error::param(format!(
                "{} slice index {index} out of range 0..{extent}",
                axis.name()
            )));
        }
        let (w, h) = self.slice_shape(axis);
        if image.width != w || image.height != h {
            return Err(Error::shape(
                format!("{w}x{h}"),
                format!("{}x{}", image.width, image.height),
            ));
        }
        for b in 0..h {
            for a in 0..w {
                let idx = self.slice_voxel(axis, index, a, b);
                self.data[idx] = image.data[b * w + a];
            }
        }
        Ok(())
    }

    pub fn dot(&self, other: &Volume3D) -> Result<f64> {
        self.check_same_dims(other)?;
        Ok(dot(&self.data, &other.data))
    }

    pub fn l2_norm_sq(&self) -> f64 {
        dot(&self.data, &self.data)
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_norm_sq().sqrt()
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Returns `alpha * self + other`.
    pub fn axpy(&self, alpha: f64, other: &Volume3D) -> Result<Volume3D> {
        self.check_same_dims(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| alpha * a + b)
            .collect();
        Ok(self.with_data(data))
    }

    pub fn scale(&self, alpha: f64) -> Volume3D {
        self.map(|v| alpha * v)
    }

    /// In-place `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &Volume3D) -> Result<()> {
        self.check_same_dims(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &Volume3D) -> Result<Volume3D> {
        other.axpy(-1.0, self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Volume3D {
        self.with_data(self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Volume3D, f: impl Fn(f64, f64) -> f64) -> Result<Volume3D> {
        self.check_same_dims(other)?;
        Ok(self.with_data(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub(crate) fn with_data(&self, data: Vec<f64>) -> Volume3D {
        debug_assert_eq!(data.len(), self.data.len());
        Volume3D {
            nx: self.nx,
            ny: self.ny,
            nz: self.nz,
            data,
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Forward difference along z with a zero last slice (Neumann boundary).
pub fn dz_forward(v: &Volume3D) -> Volume3D {
    let plane = v.nx * v.ny;
    let mut out = v.zeros_like();
    for k in 0..v.nz.saturating_sub(1) {
        let (lo, hi) = (k * plane, (k + 1) * plane);
        for p in 0..plane {
            out.data[lo + p] = v.data[hi + p] - v.data[lo + p];
        }
    }
    out
}

/// Exact transpose of [`dz_forward`].
pub fn dz_adjoint(g: &Volume3D) -> Volume3D {
    let plane = g.nx * g.ny;
    let nz = g.nz;
    let mut out = g.zeros_like();
    for k in 0..nz {
        let base = k * plane;
        for p in 0..plane {
            let mut acc = 0.0;
            if k >= 1 {
                acc += g.data[base - plane + p];
            }
            if k + 1 < nz {
                acc -= g.data[base + p];
            }
            out.data[base + p] = acc;
        }
    }
    out
}

/// `‖D_z v‖₁`, the z-axis total variation.
pub fn tv_z(v: &Volume3D) -> f64 {
    dz_forward(v).l1_norm()
}
