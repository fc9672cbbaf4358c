//! Raw little-endian float64 files with JSON sidecars at `<path>.json`.
//!
//! Volumes are stored x-fastest, z-slowest; sinograms detector-fastest,
//! then view, then slice. Sidecars never carry timestamps, so identical
//! inputs give identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{ProjectionGeometry, Sinogram3D, ViewSubsampling};
use crate::priors::{ConvDenoiser, CONV_CHANNELS, CONV_KERNEL};
use crate::volume::{Dims, Volume3D};

pub const DTYPE: &str = "float64-le";

/// Enough to re-run the producing command.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub generator: String,
    pub seed: Option<u64>,
    #[serde(default)]
    pub config: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeMeta {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub dtype: String,
    pub layout: String,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinogramMeta {
    /// Axial grid of the projected volume.
    pub nx: usize,
    pub ny: usize,
    pub n_views: usize,
    pub n_detectors: usize,
    pub nz: usize,
    pub n_angles_full: usize,
    pub detector_spacing: f64,
    pub view_indices: Vec<usize>,
    pub sigma_y: f64,
    pub seed: u64,
    pub dtype: String,
    pub layout: String,
    pub provenance: Provenance,
}

impl SinogramMeta {
    pub fn geometry(&self) -> Result<ProjectionGeometry> {
        ProjectionGeometry::new(self.n_angles_full, self.n_detectors, self.detector_spacing)
    }

    pub fn views(&self) -> Result<ViewSubsampling> {
        ViewSubsampling::new(self.view_indices.clone(), self.n_angles_full)
    }

    pub fn volume_dims(&self) -> Dims {
        Dims::new(self.nx, self.ny, self.nz)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleMeta {
    pub kind: String,
    pub t_max: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightsMeta {
    pub layers: Vec<LayerShape>,
    pub param_count: usize,
    pub dtype: String,
    pub schedule: ScheduleMeta,
    pub training_seed: u64,
    /// Training diagnostics, e.g. `held_out_loss` and `baseline_loss`.
    #[serde(default)]
    pub training: BTreeMap<String, f64>,
    pub provenance: Provenance,
}

impl WeightsMeta {
    pub fn conv_layers() -> Vec<LayerShape> {
        CONV_CHANNELS
            .windows(2)
            .map(|w| LayerShape {
                in_channels: w[0],
                out_channels: w[1],
                kernel: CONV_KERNEL,
            })
            .collect()
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_raw(path: &Path, data: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_raw(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Config(format!(
            "{}: size {} is not a multiple of 8 bytes",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn write_sidecar<T: Serialize>(path: &Path, meta: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(meta)?;
    text.push('\n');
    fs::write(sidecar_path(path), text)?;
    Ok(())
}

fn read_sidecar<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side)
        .map_err(|e| Error::Config(format!("cannot read sidecar {}: {e}", side.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn check_dtype(dtype: &str) -> Result<()> {
    if dtype != DTYPE {
        return Err(Error::Config(format!("unsupported dtype {dtype:?}, expected {DTYPE:?}")));
    }
    Ok(())
}

pub fn save_volume(path: &Path, v: &Volume3D, provenance: Provenance) -> Result<VolumeMeta> {
    let meta = VolumeMeta {
        nx: v.nx(),
        ny: v.ny(),
        nz: v.nz(),
        dtype: DTYPE.into(),
        layout: "x-fastest, z-slowest".into(),
        provenance,
    };
    write_raw(path, v.data())?;
    write_sidecar(path, &meta)?;
    Ok(meta)
}

pub fn load_volume(path: &Path) -> Result<(Volume3D, VolumeMeta)> {
    let meta: VolumeMeta = read_sidecar(path)?;
    check_dtype(&meta.dtype)?;
    let data = read_raw(path)?;
    let v = Volume3D::from_vec(meta.nx, meta.ny, meta.nz, data)?;
    v.check_finite(&path.display().to_string())?;
    Ok((v, meta))
}

#[allow(clippy::too_many_arguments)]
pub fn save_sinogram(
    path: &Path,
    s: &Sinogram3D,
    volume_dims: Dims,
    geometry: &ProjectionGeometry,
    views: &ViewSubsampling,
    sigma_y: f64,
    seed: u64,
    provenance: Provenance,
) -> Result<SinogramMeta> {
    if s.n_views() != views.len() || s.n_detectors() != geometry.n_detectors {
        return Err(Error::shape(
            format!("{} views x {} detectors", views.len(), geometry.n_detectors),
            format!("{} views x {} detectors", s.n_views(), s.n_detectors()),
        ));
    }
    if volume_dims.nz != s.nz() {
        return Err(Error::shape(volume_dims.nz, s.nz()));
    }
    let meta = SinogramMeta {
        nx: volume_dims.nx,
        ny: volume_dims.ny,
        n_views: s.n_views(),
        n_detectors: s.n_detectors(),
        nz: s.nz(),
        n_angles_full: geometry.n_angles_full,
        detector_spacing: geometry.detector_spacing,
        view_indices: views.indices().to_vec(),
        sigma_y,
        seed,
        dtype: DTYPE.into(),
        layout: "detector-fastest, then view, then z".into(),
        provenance,
    };
    write_raw(path, s.data())?;
    write_sidecar(path, &meta)?;
    Ok(meta)
}

pub fn load_sinogram(path: &Path) -> Result<(Sinogram3D, SinogramMeta)> {
    let meta: SinogramMeta = read_sidecar(path)?;
    check_dtype(&meta.dtype)?;
    if meta.view_indices.len() != meta.n_views {
        return Err(Error::Config(format!(
            "{}: {} view indices for {} views",
            path.display(),
            meta.view_indices.len(),
            meta.n_views
        )));
    }
    let s = Sinogram3D::from_vec(meta.n_views, meta.n_detectors, meta.nz, read_raw(path)?)?;
    if s.data().iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(path.display().to_string()));
    }
    Ok((s, meta))
}

pub fn save_weights(path: &Path, model: &ConvDenoiser, meta: &WeightsMeta) -> Result<()> {
    if meta.param_count != model.params().len() {
        return Err(Error::shape(meta.param_count, model.params().len()));
    }
    write_raw(path, model.params())?;
    write_sidecar(path, meta)
}

pub fn load_weights(path: &Path) -> Result<(ConvDenoiser, WeightsMeta)> {
    let meta: WeightsMeta = read_sidecar(path)?;
    check_dtype(&meta.dtype)?;
    if meta.layers != WeightsMeta::conv_layers() {
        return Err(Error::Config(format!(
            "{}: layer shapes do not match the built-in architecture",
            path.display()
        )));
    }
    let model = ConvDenoiser::from_params(read_raw(path)?)?;
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn volume_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.raw");
        let v = Volume3D::from_fn(3, 4, 5, |i, j, k| (i as f64 + 0.1) * (j as f64 - 1.5) / (k as f64 + 0.3));
        let prov = Provenance {
            command: "test".into(),
            generator: "from_fn".into(),
            seed: Some(7),
            config: BTreeMap::new(),
        };
        save_volume(&path, &v, prov.clone()).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 3 * 4 * 5 * 8);
        let (back, meta) = load_volume(&path).unwrap();
        assert_eq!(back, v);
        assert_eq!(meta.provenance, prov);
        assert_eq!((meta.nx, meta.ny, meta.nz), (3, 4, 5));
    }

    #[test]
    fn bytes_are_little_endian() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.raw");
        write_raw(&path, &[1.0, -2.5]).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], &[0, 0, 0, 0, 0, 0, 0xf0, 0x3f]);
        assert_eq!(&bytes[8..], &[0, 0, 0, 0, 0, 0, 0x04, 0xc0]);
    }

    #[test]
    fn rejects_truncated_and_missing_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.raw");
        save_volume(&path, &Volume3D::zeros(2, 2, 2), Provenance::default()).unwrap();
        fs::write(&path, [0u8; 60]).unwrap();
        assert!(load_volume(&path).is_err());
        fs::write(&path, [0u8; 56]).unwrap();
        assert!(load_volume(&path).is_err());
        let lone = dir.path().join("lone.raw");
        write_raw(&lone, &[0.0; 8]).unwrap();
        assert!(load_volume(&lone).is_err());
    }

    #[test]
    fn sinogram_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.raw");
        let geom = ProjectionGeometry::default_for(8);
        let views = ViewSubsampling::uniform(4, geom.n_angles_full).unwrap();
        let data: Vec<f64> = (0..4 * geom.n_detectors * 2).map(|i| i as f64 * 0.5).collect();
        let s = Sinogram3D::from_vec(4, geom.n_detectors, 2, data).unwrap();
        save_sinogram(&path, &s, Dims::new(8, 8, 2), &geom, &views, 0.1, 3, Provenance::default()).unwrap();
        let (back, meta) = load_sinogram(&path).unwrap();
        assert_eq!(back.data(), s.data());
        assert_eq!(meta.views().unwrap(), views);
        assert_eq!(meta.geometry().unwrap(), geom);
        assert_eq!(meta.seed, 3);
        assert_eq!(meta.volume_dims(), Dims::new(8, 8, 2));
        let wrong = ViewSubsampling::uniform(5, geom.n_angles_full).unwrap();
        assert!(save_sinogram(&path, &s, Dims::new(8, 8, 2), &geom, &wrong, 0.1, 3, Provenance::default()).is_err());
    }

    #[test]
    fn weights_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.raw");
        let model = ConvDenoiser::seeded(4);
        let meta = WeightsMeta {
            layers: WeightsMeta::conv_layers(),
            param_count: ConvDenoiser::param_count(),
            dtype: DTYPE.into(),
            schedule: ScheduleMeta {
                kind: "linear".into(),
                t_max: 1000,
                beta_start: 1e-4,
                beta_end: 0.02,
            },
            training_seed: 4,
            training: BTreeMap::new(),
            provenance: Provenance::default(),
        };
        save_weights(&path, &model, &meta).unwrap();
        let (back, m) = load_weights(&path).unwrap();
        assert_eq!(back.params(), model.params());
        assert_eq!(m, meta);
    }
}
