//! PSNR and SSIM, per slice and aggregated per anatomical view.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Axis, Image2D, Volume3D};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// `10 log₁₀(range² / MSE)`; `+∞` when the inputs are identical.
pub fn psnr(estimate: &[f64], truth: &[f64], data_range: f64) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::shape(truth.len(), estimate.len()));
    }
    if estimate.is_empty() {
        return Err(Error::param("PSNR of empty inputs"));
    }
    if !(data_range > 0.0 && data_range.is_finite()) {
        return Err(Error::param(format!("data_range must be positive, got {data_range}")));
    }
    let mse = estimate
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / estimate.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / mse).log10())
}

pub fn psnr_volume(estimate: &Volume3D, truth: &Volume3D, data_range: f64) -> Result<f64> {
    estimate.check_same_dims(truth)?;
    psnr(estimate.data(), truth.data(), data_range)
}

/// Mean of the per-slice PSNRs over the axial slices.
pub fn mean_axial_psnr(estimate: &Volume3D, truth: &Volume3D, data_range: f64) -> Result<f64> {
    estimate.check_same_dims(truth)?;
    let per = (0..truth.nz())
        .map(|k| psnr(estimate.axial(k), truth.axial(k), data_range))
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean_std(&per).0)
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

// separable Gaussian filter keeping only fully covered positions
fn filter_valid(img: &[f64], width: usize, height: usize, w: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = width - SSIM_WINDOW + 1;
    let oh = height - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ow * height];
    for y in 0..height {
        let src = &img[y * width..(y + 1) * width];
        for x in 0..ow {
            rows[y * ow + x] = w.iter().zip(&src[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|k| w[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all window positions fully inside the slices (11×11
/// Gaussian window, σ = 1.5, K₁ = 0.01, K₂ = 0.03).
pub fn ssim_2d(estimate: &Image2D, truth: &Image2D, data_range: f64) -> Result<f64> {
    if estimate.width != truth.width || estimate.height != truth.height {
        return Err(Error::shape(
            format!("{}x{}", truth.width, truth.height),
            format!("{}x{}", estimate.width, estimate.height),
        ));
    }
    let (w, h) = (truth.width, truth.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::param(format!(
            "SSIM needs slices of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    if !(data_range > 0.0) {
        return Err(Error::param("data_range must be positive"));
    }
    let win = gaussian_window();
    let (x, y) = (&estimate.data, &truth.data);
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<f64>>();
    let mu_x = filter_valid(x, w, h, &win);
    let mu_y = filter_valid(y, w, h, &win);
    let xx = filter_valid(&prod(x, x), w, h, &win);
    let yy = filter_valid(&prod(y, y), w, h, &win);
    let xy = filter_valid(&prod(x, y), w, h, &win);
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let mut total = 0.0;
    for p in 0..mu_x.len() {
        let (mx, my) = (mu_x[p], mu_y[p]);
        let vx = xx[p] - mx * mx;
        let vy = yy[p] - my * my;
        let cxy = xy[p] - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    Ok(total / mu_x.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewStats {
    pub view: String,
    pub n_slices: usize,
    #[serde(with = "metric_serde")]
    pub psnr_mean: f64,
    #[serde(with = "metric_serde")]
    pub psnr_std: f64,
    /// `None` when the slices are smaller than the SSIM window.
    pub ssim_mean: Option<f64>,
    pub ssim_std: Option<f64>,
    #[serde(with = "metric_serde::vec")]
    pub psnr_per_slice: Vec<f64>,
    pub ssim_per_slice: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub data_range: f64,
    pub views: Vec<ViewStats>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub config: BTreeMap<String, String>,
}

impl Report {
    pub fn view(&self, axis: Axis) -> Option<&ViewStats> {
        self.views.iter().find(|v| v.view == axis.name())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// One row per view: `view,n_slices,psnr_mean,psnr_std,ssim_mean,ssim_std`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("view,n_slices,psnr_mean,psnr_std,ssim_mean,ssim_std\n");
        let opt = |v: Option<f64>| v.map(fmt_metric).unwrap_or_default();
        for v in &self.views {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                v.view,
                v.n_slices,
                fmt_metric(v.psnr_mean),
                fmt_metric(v.psnr_std),
                opt(v.ssim_mean),
                opt(v.ssim_std)
            ));
        }
        out
    }
}

pub fn fmt_metric(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

/// Mean and population standard deviation. A set with any `+∞` entry has
/// mean `+∞`; its spread is 0 when every entry is `+∞` and `+∞` otherwise.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.iter().any(|v| v.is_infinite()) {
        let all = values.iter().all(|&v| v == values[0]);
        return (f64::INFINITY, if all { 0.0 } else { f64::INFINITY });
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Slice-wise PSNR and SSIM along each of the three axes (data range 1).
pub fn evaluate_volume(estimate: &Volume3D, truth: &Volume3D) -> Result<Report> {
    estimate.check_same_dims(truth)?;
    let data_range = 1.0;
    let mut views = Vec::with_capacity(3);
    for axis in Axis::ALL {
        let n = truth.extent(axis);
        let mut psnrs = Vec::with_capacity(n);
        let mut ssims = Vec::with_capacity(n);
        for s in 0..n {
            let a = estimate.slice(axis, s)?;
            let b = truth.slice(axis, s)?;
            psnrs.push(psnr(&a.data, &b.data, data_range)?);
            if a.width >= SSIM_WINDOW && a.height >= SSIM_WINDOW {
                ssims.push(ssim_2d(&a, &b, data_range)?);
            }
        }
        let (psnr_mean, psnr_std) = mean_std(&psnrs);
        let ssim = (!ssims.is_empty()).then(|| mean_std(&ssims));
        views.push(ViewStats {
            view: axis.name().to_string(),
            n_slices: n,
            psnr_mean,
            psnr_std,
            ssim_mean: ssim.map(|s| s.0),
            ssim_std: ssim.map(|s| s.1),
            psnr_per_slice: psnrs,
            ssim_per_slice: (!ssims.is_empty()).then_some(ssims),
        });
    }
    Ok(Report {
        data_range,
        views,
        seed: None,
        config: BTreeMap::new(),
    })
}

/// Writes non-finite metrics as the strings `"inf"`, `"-inf"`, `"nan"`.
mod metric_serde {
    use serde::de::{self, Deserializer, Visitor};
    use serde::Serializer;
    use std::fmt;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    struct MetricVisitor;

    impl Visitor<'_> for MetricVisitor {
        type Value = f64;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a number or one of \"inf\", \"-inf\", \"nan\"")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(E::custom(format!("unexpected metric string {other:?}"))),
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(MetricVisitor)
    }

    pub mod vec {
        use serde::de::Deserializer;
        use serde::ser::{SerializeSeq, Serializer};
        use serde::Deserialize;

        #[derive(serde::Serialize, Deserialize)]
        struct Wrapped(#[serde(with = "super")] f64);

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(v.len()))?;
            for x in v {
                seq.serialize_element(&Wrapped(*x))?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Ok(Vec::<Wrapped>::deserialize(d)?.into_iter().map(|w| w.0).collect())
        }
    }
}
