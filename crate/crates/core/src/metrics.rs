//! Image-quality and segmentation metrics, and the training-loss arithmetic.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::correct::FeatureMap;
use crate::error::{Error, Result};
use crate::imaging::{read_labels, read_png, ImageTensor};

pub const REPORT_FORMAT_VERSION: u32 = 1;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn check_same(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if a.data.dim() != b.data.dim() {
        return Err(Error::dim("image pair", format!("{:?}", a.data.dim()), format!("{:?}", b.data.dim())));
    }
    Ok(())
}

/// PSNR in dB on unit range. Identical images give `f64::INFINITY`.
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_same(a, b)?;
    let sse: f64 = a.data.iter().zip(b.data.iter()).map(|(x, y)| (f64::from(*x) - f64::from(*y)).powi(2)).sum();
    let mse = sse / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

fn gaussian_window(n: usize, sigma: f64) -> Vec<f64> {
    let c = (n / 2) as f64;
    let g: Vec<f64> = (0..n).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable weighted mean over every fully contained window.
fn local_mean(x: &Array2<f64>, g: &[f64]) -> Array2<f64> {
    let (h, w) = x.dim();
    let n = g.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = Array2::<f64>::zeros((h, ow));
    for y in 0..h {
        for x0 in 0..ow {
            rows[[y, x0]] = (0..n).map(|i| g[i] * x[[y, x0 + i]]).sum();
        }
    }
    Array2::from_shape_fn((oh, ow), |(y0, x0)| (0..n).map(|j| g[j] * rows[[y0 + j, x0]]).sum())
}

fn ssim_plane(a: &Array2<f64>, b: &Array2<f64>, g: &[f64]) -> f64 {
    let mu_a = local_mean(a, g);
    let mu_b = local_mean(b, g);
    let aa = local_mean(&(a * a), g);
    let bb = local_mean(&(b * b), g);
    let ab = local_mean(&(a * b), g);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a.as_slice().unwrap()[i], mu_b.as_slice().unwrap()[i]);
        let va = aa.as_slice().unwrap()[i] - ma * ma;
        let vb = bb.as_slice().unwrap()[i] - mb * mb;
        let cov = ab.as_slice().unwrap()[i] - ma * mb;
        total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
    }
    total / mu_a.len() as f64
}

/// Mean SSIM over channels with a Gaussian window (sigma 1.5) evaluated at
/// every position where the window fits inside the image.
pub fn ssim(a: &ImageTensor, b: &ImageTensor, window: usize) -> Result<f64> {
    check_same(a, b)?;
    if window == 0 || window % 2 == 0 {
        return Err(Error::InvalidArgument(format!("ssim window must be odd, got {window}")));
    }
    if window > a.height() || window > a.width() {
        return Err(Error::InvalidArgument(format!(
            "ssim window {window} exceeds image {}x{}",
            a.height(),
            a.width()
        )));
    }
    let g = gaussian_window(window, SSIM_SIGMA);
    let c = a.channels();
    let sum: f64 = (0..c).map(|ch| ssim_plane(&a.plane_f64(ch), &b.plane_f64(ch), &g)).sum();
    Ok(sum / c as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegScores {
    /// `None` for classes absent from both rasters.
    pub iou: Vec<Option<f64>>,
    pub dice: Vec<Option<f64>>,
    pub mean_iou: f64,
    pub mean_dice: f64,
}

/// Per-class pixel-set counts `(intersection, |pred|, |gt|)`.
fn class_counts(pred: &Array2<u32>, gt: &Array2<u32>, num_classes: usize) -> Result<Vec<[u64; 3]>> {
    if pred.dim() != gt.dim() {
        return Err(Error::dim("label pair", format!("{:?}", gt.dim()), format!("{:?}", pred.dim())));
    }
    let mut counts = vec![[0u64; 3]; num_classes];
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        for label in [p, g] {
            if label as usize >= num_classes {
                return Err(Error::LabelOutOfRange { label, num_classes });
            }
        }
        counts[p as usize][1] += 1;
        counts[g as usize][2] += 1;
        if p == g {
            counts[p as usize][0] += 1;
        }
    }
    Ok(counts)
}

fn scores_from_counts(counts: &[[u64; 3]]) -> SegScores {
    let mut iou = Vec::with_capacity(counts.len());
    let mut dice = Vec::with_capacity(counts.len());
    for &[inter, p, g] in counts {
        if p + g == 0 {
            iou.push(None);
            dice.push(None);
            continue;
        }
        iou.push(Some(inter as f64 / (p + g - inter) as f64));
        dice.push(Some(2.0 * inter as f64 / (p + g) as f64));
    }
    let mean = |v: &[Option<f64>]| {
        let present: Vec<f64> = v.iter().flatten().copied().collect();
        if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 }
    };
    SegScores { mean_iou: mean(&iou), mean_dice: mean(&dice), iou, dice }
}

pub fn seg_scores(pred: &Array2<u32>, gt: &Array2<u32>, num_classes: usize) -> Result<SegScores> {
    Ok(scores_from_counts(&class_counts(pred, gt, num_classes)?))
}

/// Min-max normalized gradient map. A constant map normalizes to ones.
pub fn normalize_grad_map(m: &Array2<f64>) -> Array2<f64> {
    let lo = m.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        m.mapv(|v| (v - lo) / (hi - lo))
    } else {
        Array2::ones(m.dim())
    }
}

/// Gradient-weighted L1 feature distance. The `H x W` weight map is
/// broadcast over channels and the result is normalized by the total
/// broadcast weight, so a constant difference `c` scores `c`.
pub fn distill_loss(grad_map: &Array2<f64>, teacher: &FeatureMap, student: &FeatureMap) -> Result<f64> {
    let shape = teacher.data.dim();
    if student.data.dim() != shape {
        return Err(Error::dim("student", format!("{shape:?}"), format!("{:?}", student.data.dim())));
    }
    if grad_map.dim() != (shape.1, shape.2) {
        return Err(Error::dim("grad_map", format!("{:?}", (shape.1, shape.2)), format!("{:?}", grad_map.dim())));
    }
    let mt = normalize_grad_map(grad_map);
    let mut acc = 0.0;
    for ((c, y, x), t) in teacher.data.indexed_iter() {
        acc += mt[[y, x]] * (f64::from(*t) - f64::from(student.data[[c, y, x]])).abs();
    }
    let mass = mt.sum() * shape.0 as f64;
    Ok(if mass > 0.0 { acc / mass } else { 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda: f64,
    pub omega_d: f64,
    pub omega_k: f64,
}

impl LossWeights {
    /// Surgery datasets.
    pub fn surgery() -> Self {
        Self { lambda: 0.1, omega_d: 1.0, omega_k: 1.0 }
    }

    /// Diagnosis datasets.
    pub fn diagnosis() -> Self {
        Self { lambda: 0.01, omega_d: 1.0, omega_k: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.lambda, self.omega_d, self.omega_k].iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

pub fn total_objective(l_seg: f64, l_rest: f64, l_distill: f64, l_kl: f64, w: &LossWeights) -> f64 {
    l_seg + w.lambda * l_rest + w.omega_d * l_distill + w.omega_k * l_kl
}

/// Serializes non-finite dB values as the string `"inf"`.
pub mod db_serde {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad dB value `{t}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub name: String,
    #[serde(with = "db_serde")]
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub format_version: u32,
    pub pairs: usize,
    #[serde(with = "db_serde")]
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub per_image: Vec<PairMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<SegScores>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_pairs: Option<usize>,
}

fn png_names(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file() && e.path().extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    Ok(names)
}

/// Mask directories for segmentation scoring.
#[derive(Debug, Clone)]
pub struct MaskDirs {
    pub pred: PathBuf,
    pub gt: PathBuf,
    pub num_classes: usize,
}

/// Scores every PNG in `pred` against the same-named PNG in `gt`. Means are
/// reduced in file-name order; segmentation pools class counts over pairs.
pub fn evaluate_dirs(pred: &Path, gt: &Path, masks: Option<&MaskDirs>) -> Result<MetricReport> {
    let names = png_names(pred)?;
    if names.is_empty() {
        return Err(Error::InvalidArgument(format!("no PNG images in {}", pred.display())));
    }
    let per_image: Vec<PairMetrics> = names
        .par_iter()
        .map(|n| -> Result<PairMetrics> {
            let a = read_png(&pred.join(n), true)?;
            let b = read_png(&gt.join(n), true)?;
            let side = a.height().min(a.width());
            let window = if side >= SSIM_WINDOW { SSIM_WINDOW } else { side - (1 - side % 2) };
            Ok(PairMetrics { name: n.clone(), psnr: psnr(&a, &b)?, ssim: ssim(&a, &b, window)? })
        })
        .collect::<Result<_>>()?;
    let count = per_image.len() as f64;
    let mean_psnr = per_image.iter().map(|p| p.psnr).sum::<f64>() / count;
    let mean_ssim = per_image.iter().map(|p| p.ssim).sum::<f64>() / count;
    let (segmentation, mask_pairs) = match masks {
        Some(m) => {
            let mnames = png_names(&m.pred)?;
            let counts: Vec<Vec<[u64; 3]>> = mnames
                .par_iter()
                .map(|n| class_counts(&read_labels(&m.pred.join(n))?, &read_labels(&m.gt.join(n))?, m.num_classes))
                .collect::<Result<_>>()?;
            let mut pooled = vec![[0u64; 3]; m.num_classes];
            for c in &counts {
                for (acc, v) in pooled.iter_mut().zip(c) {
                    for k in 0..3 {
                        acc[k] += v[k];
                    }
                }
            }
            (Some(scores_from_counts(&pooled)), Some(mnames.len()))
        }
        None => (None, None),
    };
    Ok(MetricReport {
        format_version: REPORT_FORMAT_VERSION,
        pairs: per_image.len(),
        mean_psnr,
        mean_ssim,
        per_image,
        segmentation,
        mask_pairs,
    })
}

/// Mean PSNR and SSIM over image pairs, reduced in order.
pub fn mean_quality(pairs: &[(ImageTensor, ImageTensor)]) -> Result<(f64, f64)> {
    let vals: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|(a, b)| Ok((psnr(a, b)?, ssim(a, b, SSIM_WINDOW)?)))
        .collect::<Result<_>>()?;
    let n = vals.len() as f64;
    Ok((vals.iter().map(|v| v.0).sum::<f64>() / n, vals.iter().map(|v| v.1).sum::<f64>() / n))
}
