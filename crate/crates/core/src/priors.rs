//! Optical priors: spatial attenuation maps, white-image analysis and the
//! embedding inputs of the intensity-adjustment stage.

use std::collections::VecDeque;
use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use ndarray::{Array2, Array3, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::propagate::EfficiencyVector;
use crate::raster::{self, DType, RasterHeader};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EtaKind {
    /// `cos^p(theta)`, parameters `[p]`.
    CosinePower,
    /// `sum c_i theta^i / c_0`, parameters `[c_0, c_1, ...]`.
    Polynomial,
    /// Samples at equally spaced angles over `[0, theta_max]`, linearly interpolated.
    TabulatedRadial,
}

/// Off-axis efficiency model of the meta-atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaModel {
    pub kind: EtaKind,
    pub parameters: Vec<f64>,
    /// Radians.
    pub theta_max: f64,
}

impl EtaModel {
    pub fn cosine_power(p: f64) -> Self {
        Self { kind: EtaKind::CosinePower, parameters: vec![p], theta_max: FRAC_PI_2 }
    }

    pub fn unit() -> Self {
        Self::cosine_power(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta_max > 0.0 && self.theta_max <= FRAC_PI_2) {
            return Err(Error::InvalidArgument(format!("eta theta_max must lie in (0, pi/2], got {}", self.theta_max)));
        }
        let ok = match self.kind {
            EtaKind::CosinePower => self.parameters.len() == 1 && self.parameters[0] >= 0.0,
            EtaKind::Polynomial => !self.parameters.is_empty() && self.parameters[0] > 0.0,
            EtaKind::TabulatedRadial => self.parameters.len() >= 2 && self.parameters[0] > 0.0,
        };
        if !ok || self.parameters.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid {:?} eta parameters {:?}", self.kind, self.parameters)));
        }
        Ok(())
    }

    pub fn eval(&self, theta: f64) -> Result<f64> {
        if theta > self.theta_max * (1.0 + 1e-12) {
            return Err(Error::OutOfModel { theta, theta_max: self.theta_max });
        }
        let p = &self.parameters;
        let v = match self.kind {
            EtaKind::CosinePower => theta.cos().max(0.0).powf(p[0]),
            EtaKind::Polynomial => p.iter().rev().fold(0.0, |acc, c| acc * theta + c) / p[0],
            EtaKind::TabulatedRadial => {
                let t = (theta / self.theta_max).clamp(0.0, 1.0) * (p.len() - 1) as f64;
                let i = (t.floor() as usize).min(p.len() - 2);
                let f = t - i as f64;
                (p[i] * (1.0 - f) + p[i + 1] * f) / p[0]
            }
        };
        Ok(v.clamp(0.0, 1.0))
    }
}

/// Attenuation map `Y` in `[0, 1]`, peak 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialPrior {
    pub map: Array2<f64>,
    /// Pixel coordinates `(x0, y0)`.
    pub center: (f64, f64),
    /// Micrometres.
    pub pixel_pitch: f64,
    /// Micrometres.
    pub focal_length: f64,
}

impl SpatialPrior {
    pub fn uniform(width: usize, height: usize) -> Self {
        Self {
            map: Array2::ones((height, width)),
            center: ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0),
            pixel_pitch: 0.0,
            focal_length: 0.0,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let (h, w) = self.map.dim();
        let header = RasterHeader::new(
            "spatial_prior",
            DType::F32,
            vec![h, w],
            serde_json::json!({
                "center": [self.center.0, self.center.1],
                "pixel_pitch_um": self.pixel_pitch,
                "focal_length_um": self.focal_length,
            }),
        );
        let payload: Vec<f32> = self.map.iter().map(|&v| v as f32).collect();
        raster::write_file(path, &header, &payload)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (h, data) = raster::read_kind(path, "spatial_prior")?;
        if h.shape.len() != 2 || h.dtype != DType::F32 {
            return Err(Error::Format("spatial_prior must be a 2-D f32 raster".into()));
        }
        let m = &h.meta;
        let center = m["center"]
            .as_array()
            .and_then(|c| Some((c.first()?.as_f64()?, c.get(1)?.as_f64()?)))
            .ok_or_else(|| Error::Format("spatial_prior missing center".into()))?;
        let map = Array2::from_shape_vec((h.shape[0], h.shape[1]), data.into_iter().map(f64::from).collect())
            .map_err(|e| Error::Format(e.to_string()))?;
        Ok(Self {
            map,
            center,
            pixel_pitch: m["pixel_pitch_um"].as_f64().unwrap_or(0.0),
            focal_length: m["focal_length_um"].as_f64().unwrap_or(0.0),
        })
    }
}

/// `eta(theta) cos^4(theta)` with `theta = atan(rho * pitch / f)`, normalized to peak 1.
pub fn vignetting_map(width: usize, height: usize, focal_length: f64, pixel_pitch: f64, eta: &EtaModel) -> Result<SpatialPrior> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument("vignetting map needs positive dimensions".into()));
    }
    if !(focal_length > 0.0 && pixel_pitch > 0.0) {
        return Err(Error::InvalidArgument("focal length and pixel pitch must be positive".into()));
    }
    eta.validate()?;
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let theta = |x: f64, y: f64| ((x - cx).hypot(y - cy) * pixel_pitch / focal_length).atan();
    let corner = theta(0.0, 0.0);
    if corner > eta.theta_max {
        return Err(Error::OutOfModel { theta: corner, theta_max: eta.theta_max });
    }
    let mut map = Array2::<f64>::zeros((height, width));
    for ((y, x), v) in map.indexed_iter_mut() {
        let t = theta(x as f64, y as f64);
        *v = eta.eval(t)? * t.cos().powi(4);
    }
    let max = map.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        map.mapv_inplace(|v| v / max);
    }
    Ok(SpatialPrior { map, center: (cx, cy), pixel_pitch, focal_length })
}

#[derive(Debug, Clone, Serialize)]
pub struct RadialProfile {
    /// Mean pixel radius of each 1-px annulus.
    pub radius: Vec<f64>,
    pub mean: Vec<f64>,
    pub count: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct WhiteImageAnalysis {
    pub center: (f64, f64),
    pub threshold: f64,
    pub region_pixels: usize,
    pub channel_means: Vec<f64>,
    pub profiles: Vec<RadialProfile>,
    pub eta: Vec<EtaModel>,
    pub warnings: Vec<String>,
}

pub fn luminance(img: &ImageTensor) -> Array2<f64> {
    if img.channels() == 1 {
        return img.plane_f64(0);
    }
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let mut out = Array2::<f64>::zeros((img.height(), img.width()));
    ndarray::Zip::from(&mut out).and(&r).and(&g).and(&b).for_each(|o, &r, &g, &b| {
        *o = 0.2126 * f64::from(r) + 0.7152 * f64::from(g) + 0.0722 * f64::from(b);
    });
    out
}

/// Otsu threshold over a 256-bin histogram spanning the data range.
pub fn otsu_threshold(values: &Array2<f64>) -> f64 {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return lo;
    }
    let bins = 256;
    let mut hist = vec![0usize; bins];
    for &v in values.iter() {
        let b = (((v - lo) / (hi - lo)) * bins as f64) as usize;
        hist[b.min(bins - 1)] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_var) = (0, -1.0);
    for (t, &c) in hist.iter().enumerate() {
        w0 += c as f64;
        sum0 += t as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let (m0, m1) = (sum0 / w0, (sum_all - sum0) / w1);
        let var = w0 * w1 * (m0 - m1).powi(2);
        if var > best_var {
            best_var = var;
            best = t;
        }
    }
    lo + (best as f64 + 1.0) / bins as f64 * (hi - lo)
}

/// Largest 4-connected component of `mask`, as a mask.
pub fn largest_component(mask: &Array2<bool>) -> Array2<bool> {
    let (h, w) = mask.dim();
    let mut label = Array2::<u32>::zeros((h, w));
    let mut best = (0u32, 0usize);
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if !mask[[y, x]] || label[[y, x]] != 0 {
                continue;
            }
            next += 1;
            let mut size = 0;
            label[[y, x]] = next;
            queue.push_back((y, x));
            while let Some((cy, cx)) = queue.pop_front() {
                size += 1;
                let nbrs = [(cy.wrapping_sub(1), cx), (cy + 1, cx), (cy, cx.wrapping_sub(1)), (cy, cx + 1)];
                for (ny, nx) in nbrs {
                    if ny < h && nx < w && mask[[ny, nx]] && label[[ny, nx]] == 0 {
                        label[[ny, nx]] = next;
                        queue.push_back((ny, nx));
                    }
                }
            }
            if size > best.1 {
                best = (next, size);
            }
        }
    }
    label.mapv(|l| l != 0 && l == best.0)
}

fn radial_profile(plane: &Array2<f64>, region: &Array2<bool>, center: (f64, f64)) -> RadialProfile {
    let (h, w) = plane.dim();
    let rmax = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .filter(|&(y, x)| region[[y, x]])
        .map(|(y, x)| (x as f64 - center.0).hypot(y as f64 - center.1))
        .fold(0.0, f64::max);
    let bins = rmax.floor() as usize + 1;
    // per-row partial histograms, merged in row order
    let rows: Vec<(Vec<f64>, Vec<f64>, Vec<usize>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let (mut s, mut r, mut c) = (vec![0.0; bins], vec![0.0; bins], vec![0usize; bins]);
            for x in 0..w {
                if region[[y, x]] {
                    let rho = (x as f64 - center.0).hypot(y as f64 - center.1);
                    let b = (rho.floor() as usize).min(bins - 1);
                    s[b] += plane[[y, x]];
                    r[b] += rho;
                    c[b] += 1;
                }
            }
            (s, r, c)
        })
        .collect();
    let (mut sum, mut rad, mut count) = (vec![0.0; bins], vec![0.0; bins], vec![0usize; bins]);
    for (s, r, c) in rows {
        for b in 0..bins {
            sum[b] += s[b];
            rad[b] += r[b];
            count[b] += c[b];
        }
    }
    let mut radius: Vec<Option<f64>> = (0..bins).map(|b| (count[b] > 0).then(|| rad[b] / count[b] as f64)).collect();
    let mut mean: Vec<Option<f64>> = (0..bins).map(|b| (count[b] > 0).then(|| sum[b] / count[b] as f64)).collect();
    fill_gaps(&mut radius, |b| b as f64 + 0.5);
    fill_gaps(&mut mean, |_| 0.0);
    RadialProfile {
        radius: radius.into_iter().map(|v| v.unwrap_or(0.0)).collect(),
        mean: mean.into_iter().map(|v| v.unwrap_or(0.0)).collect(),
        count,
    }
}

/// Linear interpolation across empty bins; ends copy the nearest filled bin.
fn fill_gaps(v: &mut [Option<f64>], fallback: impl Fn(usize) -> f64) {
    let filled: Vec<usize> = (0..v.len()).filter(|&i| v[i].is_some()).collect();
    if filled.is_empty() {
        for (i, x) in v.iter_mut().enumerate() {
            *x = Some(fallback(i));
        }
        return;
    }
    for i in 0..v.len() {
        if v[i].is_some() {
            continue;
        }
        let lo = filled.iter().rev().find(|&&j| j < i).copied();
        let hi = filled.iter().find(|&&j| j > i).copied();
        v[i] = match (lo, hi) {
            (Some(a), Some(b)) => {
                let (va, vb) = (v[a].unwrap(), v[b].unwrap());
                Some(va + (vb - va) * (i - a) as f64 / (b - a) as f64)
            }
            (Some(a), None) => v[a],
            (None, Some(b)) => v[b],
            (None, None) => None,
        };
    }
}

/// Weighted fit of `log m = log A + (4 + p) log cos(theta)`; returns `p`.
fn fit_cosine_power(profile: &RadialProfile, pixel_pitch: f64, focal_length: f64) -> Option<f64> {
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((&r, &m), &c) in profile.radius.iter().zip(&profile.mean).zip(&profile.count) {
        if c == 0 || m <= 0.0 {
            continue;
        }
        let x = (r * pixel_pitch / focal_length).atan().cos().ln();
        let y = m.ln();
        let w = c as f64;
        sw += w;
        sx += w * x;
        sy += w * y;
        sxx += w * x * x;
        sxy += w * x * y;
    }
    let denom = sw * sxx - sx * sx;
    if sw == 0.0 || denom.abs() < 1e-300 {
        return None;
    }
    Some((sw * sxy - sx * sy) / denom - 4.0)
}

/// Locates the exposed disc of a white-field capture and fits a
/// cosine-power efficiency model per channel.
pub fn analyze_white_image(image: &ImageTensor, focal_length: f64, pixel_pitch: f64) -> Result<WhiteImageAnalysis> {
    if !(focal_length > 0.0 && pixel_pitch > 0.0) {
        return Err(Error::InvalidArgument("focal length and pixel pitch must be positive".into()));
    }
    let lum = luminance(image);
    let threshold = otsu_threshold(&lum);
    let mask = lum.mapv(|v| v > threshold);
    let region = largest_component(&mask);
    let npx = region.iter().filter(|&&m| m).count();
    if npx < 16 {
        return Err(Error::Detection(format!("no exposed region found (largest component has {npx} pixels)")));
    }
    let (mut sx, mut sy) = (0.0, 0.0);
    for ((y, x), &m) in region.indexed_iter() {
        if m {
            sx += x as f64;
            sy += y as f64;
        }
    }
    let center = (sx / npx as f64, sy / npx as f64);
    let mut warnings = Vec::new();
    let mut profiles = Vec::new();
    let mut etas = Vec::new();
    let mut means = Vec::new();
    for c in 0..image.channels() {
        let plane = image.plane_f64(c);
        let total: f64 = plane.iter().zip(region.iter()).filter(|(_, &m)| m).map(|(v, _)| v).sum();
        means.push(total / npx as f64);
        let prof = radial_profile(&plane, &region, center);
        let nonmono = prof.mean.windows(2).any(|w| w[1] > w[0] * (1.0 + 1e-6));
        if nonmono {
            warnings.push(format!("channel {c}: radial profile is not monotone"));
        }
        let p = fit_cosine_power(&prof, pixel_pitch, focal_length).unwrap_or(0.0);
        let p = if p < 0.0 {
            warnings.push(format!("channel {c}: fitted exponent {p:.4} clamped to 0"));
            0.0
        } else {
            p
        };
        etas.push(EtaModel::cosine_power(p));
        profiles.push(prof);
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(WhiteImageAnalysis { center, threshold, region_pixels: npx, channel_means: means, profiles, eta: etas, warnings })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingInputs {
    pub channel: Vec<f64>,
    /// `[Y, C_x, C_y]` stacked along axis 0.
    pub spatial: Array3<f64>,
}

fn normalized_coord(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        -1.0 + 2.0 * i as f64 / (n - 1) as f64
    }
}

pub fn embedding_inputs(t: &EfficiencyVector, y: &SpatialPrior) -> EmbeddingInputs {
    let (h, w) = y.map.dim();
    let mut spatial = Array3::<f64>::zeros((3, h, w));
    spatial.index_axis_mut(Axis(0), 0).assign(&y.map);
    for ((c, r, x), v) in spatial.indexed_iter_mut() {
        match c {
            1 => *v = normalized_coord(x, w),
            2 => *v = normalized_coord(r, h),
            _ => {}
        }
    }
    EmbeddingInputs { channel: t.efficiency.clone(), spatial }
}

impl EmbeddingInputs {
    pub fn write(&self, path: &Path) -> Result<()> {
        let (c, h, w) = self.spatial.dim();
        let header = RasterHeader::new(
            "embedding_stack",
            DType::F32,
            vec![c, h, w],
            serde_json::json!({ "order": ["Y", "C_x", "C_y"], "channel": self.channel }),
        );
        let payload: Vec<f32> = self.spatial.iter().map(|&v| v as f32).collect();
        raster::write_file(path, &header, &payload)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (h, data) = raster::read_kind(path, "embedding_stack")?;
        if h.shape.len() != 3 || h.shape[0] != 3 {
            return Err(Error::Format("embedding_stack must have shape [3, H, W]".into()));
        }
        let channel: Vec<f64> = serde_json::from_value(h.meta["channel"].clone())?;
        let spatial = Array3::from_shape_vec((3, h.shape[1], h.shape[2]), data.into_iter().map(f64::from).collect())
            .map_err(|e| Error::Format(e.to_string()))?;
        Ok(Self { channel, spatial })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn vignetting_center_and_angles() {
        let m = vignetting_map(101, 101, 1000.0, 10.0, &EtaModel::unit()).unwrap();
        assert_eq!(m.map[[50, 50]], 1.0);
        // pixel at distance rho with rho*pitch/f = tan(30 deg)
        let f = 1000.0;
        let pitch = f * (30f64.to_radians()).tan() / 40.0;
        let m = vignetting_map(81, 81, f, pitch, &EtaModel::unit()).unwrap();
        assert!((m.map[[40, 80]] - 0.5625).abs() < 1e-12);
        let m = vignetting_map(81, 81, f, pitch, &EtaModel::cosine_power(2.0)).unwrap();
        let want = 0.5625 * 0.75;
        assert!((m.map[[40, 80]] - want).abs() < 1e-12);
        assert!((want - 0.4219).abs() < 1e-4);
    }

    #[test]
    fn vignetting_out_of_model() {
        let eta = EtaModel { theta_max: 0.1, ..EtaModel::unit() };
        assert!(matches!(vignetting_map(101, 101, 1000.0, 10.0, &eta), Err(Error::OutOfModel { .. })));
    }

    #[test]
    fn eta_kinds() {
        let poly = EtaModel { kind: EtaKind::Polynomial, parameters: vec![2.0, 0.0, -1.0], theta_max: 1.0 };
        assert_eq!(poly.eval(0.0).unwrap(), 1.0);
        assert!((poly.eval(0.5).unwrap() - (2.0 - 0.25) / 2.0).abs() < 1e-15);
        let tab = EtaModel { kind: EtaKind::TabulatedRadial, parameters: vec![4.0, 3.0, 2.0], theta_max: 1.0 };
        assert!((tab.eval(0.25).unwrap() - 0.875).abs() < 1e-15);
        assert!((tab.eval(1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(tab.eval(1.1).is_err());
    }

    fn white_disc(p: f64, gains: [f64; 3]) -> ImageTensor {
        let (w, h) = (161usize, 151usize);
        let (f, pitch) = (10_000.0, 60.0);
        let v = vignetting_map(w, h, f, pitch, &EtaModel::cosine_power(p)).unwrap();
        // disc off-centre by a few pixels to exercise detection
        let (cx, cy, r) = (80.0, 75.0, 70.0);
        let data = Array3::from_shape_fn((3, h, w), |(c, y, x)| {
            if (x as f64 - cx).hypot(y as f64 - cy) <= r {
                (0.3 * gains[c] * v.map[[y, x]]) as f32
            } else {
                0.0
            }
        });
        ImageTensor::linear(data).unwrap()
    }

    #[test]
    fn white_image_roundtrip() {
        let a = analyze_white_image(&white_disc(2.5, [1.0; 3]), 10_000.0, 60.0).unwrap();
        assert!((a.center.0 - 80.0).abs() < 1.0 && (a.center.1 - 75.0).abs() < 1.0);
        for e in &a.eta {
            assert!((e.parameters[0] - 2.5).abs() < 0.05 * 2.5, "{:?}", e.parameters);
        }
    }

    #[test]
    fn uniform_disc_fits_unit_eta() {
        let data = Array3::from_shape_fn((1, 64, 64), |(_, y, x)| {
            if (x as f64 - 31.5).hypot(y as f64 - 31.5) <= 25.0 { 0.8 } else { 0.05 }
        });
        let a = analyze_white_image(&ImageTensor::linear(data).unwrap(), 10_000.0, 60.0).unwrap();
        assert!(a.eta[0].parameters[0].abs() < 1e-6);
        assert!(!a.warnings.is_empty());
    }

    #[test]
    fn white_balance_ratios_from_means() {
        let a = analyze_white_image(&white_disc(0.0, [1.67, 1.0, 2.34]), 10_000.0, 60.0).unwrap();
        let m = &a.channel_means;
        assert!((m[0] / m[1] - 1.67).abs() < 1e-5);
        assert!((m[2] / m[1] - 2.34).abs() < 1e-5);
    }

    #[test]
    fn detection_failure() {
        let img = ImageTensor::linear(Array3::from_elem((1, 8, 8), 0.5)).unwrap();
        assert!(matches!(analyze_white_image(&img, 1.0, 1.0), Err(Error::Detection(_))));
    }

    #[test]
    fn embedding_coordinates() {
        let t = EfficiencyVector::reference_table();
        let e = embedding_inputs(&t, &SpatialPrior::uniform(2, 2));
        assert_eq!(e.channel, t.efficiency);
        assert_eq!(e.spatial.index_axis(Axis(0), 1).row(0).to_vec(), vec![-1.0, 1.0]);
        assert_eq!(e.spatial.index_axis(Axis(0), 1).row(1).to_vec(), vec![-1.0, 1.0]);
        assert_eq!(e.spatial.index_axis(Axis(0), 2).column(0).to_vec(), vec![-1.0, 1.0]);
        let e = embedding_inputs(&t, &SpatialPrior::uniform(5, 3));
        assert_eq!(e.spatial[[1, 1, 2]], 0.0);
        assert_eq!(e.spatial[[2, 1, 2]], 0.0);
    }

    #[test]
    fn embedding_serialization_is_byte_stable() {
        let y = vignetting_map(7, 5, 1000.0, 50.0, &EtaModel::cosine_power(1.0)).unwrap();
        let e = embedding_inputs(&EfficiencyVector::reference_table(), &y);
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a"), dir.path().join("b"));
        e.write(&p1).unwrap();
        let back = EmbeddingInputs::read(&p1).unwrap();
        back.write(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(back.channel, e.channel);
    }

    proptest! {
        #[test]
        fn vignetting_rotation_invariant(n in 3usize..40, p in 0.0f64..6.0, pitch in 1.0f64..100.0) {
            let m = vignetting_map(n, n, 5000.0, pitch, &EtaModel::cosine_power(p)).unwrap().map;
            for ((y, x), &v) in m.indexed_iter() {
                prop_assert!((v - m[[x, n - 1 - y]]).abs() < 1e-9);
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn white_image_recovers_exponent(p in 0.5f64..8.0) {
            let a = analyze_white_image(&white_disc(p, [1.0; 3]), 10_000.0, 60.0).unwrap();
            prop_assert!((a.eta[1].parameters[0] - p).abs() < 0.05 * p);
        }
    }
}
