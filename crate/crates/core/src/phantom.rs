//! Analytic 3D Shepp-Logan phantom.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Dims, Volume3D};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    /// Center in normalized coordinates `[-1, 1]³`.
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
    /// Rotation about the z axis through the center, in degrees.
    pub phi_deg: f64,
    pub intensity: f64,
}

impl Ellipsoid {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let (s, c) = self.phi_deg.to_radians().sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let dz = p[2] - self.center[2];
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        let [a, b, cz] = self.semi_axes;
        (u / a).powi(2) + (v / b).powi(2) + (dz / cz).powi(2) <= 1.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub ellipsoids: Vec<Ellipsoid>,
    pub dims: Dims,
}

// intensity, semi-axes (a, b, c), center (x, y, z), phi
const SHEPP_LOGAN: [(f64, [f64; 3], [f64; 3], f64); 10] = [
    (1.0, [0.69, 0.92, 0.81], [0.0, 0.0, 0.0], 0.0),
    (-0.8, [0.6624, 0.874, 0.78], [0.0, -0.0184, 0.0], 0.0),
    (-0.2, [0.11, 0.31, 0.22], [0.22, 0.0, 0.0], -18.0),
    (-0.2, [0.16, 0.41, 0.28], [-0.22, 0.0, 0.0], 18.0),
    (0.1, [0.21, 0.25, 0.41], [0.0, 0.35, -0.15], 0.0),
    (0.1, [0.046, 0.046, 0.05], [0.0, 0.1, 0.25], 0.0),
    (0.1, [0.046, 0.046, 0.05], [0.0, -0.1, 0.25], 0.0),
    (0.1, [0.046, 0.023, 0.05], [-0.08, -0.605, 0.0], 0.0),
    (0.1, [0.023, 0.023, 0.02], [0.0, -0.606, 0.0], 0.0),
    (0.1, [0.023, 0.046, 0.02], [0.06, -0.605, 0.0], 0.0),
];

impl PhantomSpec {
    /// The modified (high-contrast) ten-ellipsoid Shepp-Logan phantom.
    pub fn shepp_logan(dims: Dims) -> Self {
        let ellipsoids = SHEPP_LOGAN
            .iter()
            .map(|&(intensity, semi_axes, center, phi_deg)| Ellipsoid {
                center,
                semi_axes,
                phi_deg,
                intensity,
            })
            .collect();
        PhantomSpec { ellipsoids, dims }
    }

    /// Sums the intensities of the ellipsoids containing each voxel center
    /// and clips to `[0, 1]`.
    pub fn render(&self) -> Result<Volume3D> {
        let Dims { nx, ny, nz } = self.dims;
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::param(format!("phantom dimensions must be positive, got {}", self.dims)));
        }
        if self.ellipsoids.is_empty() {
            return Err(Error::param("phantom needs at least one ellipsoid"));
        }
        for e in &self.ellipsoids {
            if e.semi_axes.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
                return Err(Error::param("ellipsoid semi-axes must be positive"));
            }
        }
        Ok(Volume3D::from_fn(nx, ny, nz, |i, j, k| {
            let p = [voxel_coord(i, nx), voxel_coord(j, ny), voxel_coord(k, nz)];
            let sum: f64 = self
                .ellipsoids
                .iter()
                .filter(|e| e.contains(p))
                .map(|e| e.intensity)
                .sum();
            sum.clamp(0.0, 1.0)
        }))
    }
}

/// Normalized coordinate of voxel center `i` on an `n`-voxel axis,
/// `((2i + 1) − n) / n`; exactly antisymmetric under `i → n − 1 − i`.
pub fn voxel_coord(i: usize, n: usize) -> f64 {
    (2.0 * i as f64 + 1.0 - n as f64) / n as f64
}

pub fn shepp_logan_3d(nx: usize, ny: usize, nz: usize) -> Result<Volume3D> {
    if nx < 8 || ny < 8 || nz < 8 {
        return Err(Error::param(format!(
            "phantom dimensions must be at least 8, got {nx}x{ny}x{nz}"
        )));
    }
    PhantomSpec::shepp_logan(Dims::new(nx, ny, nz)).render()
}
