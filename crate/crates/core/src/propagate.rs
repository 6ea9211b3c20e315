//! Fresnel propagation, PSF extraction, focal sweeps and channel efficiency.
//!
//! Two evaluators of the same Fresnel integral are provided:
//! [`fresnel_propagate`] multiplies the spectrum by the paraxial transfer
//! function and keeps the input grid, while [`fresnel_direct`] sums the
//! integral straight onto an arbitrary rectangular output window, which is
//! what PSF extraction needs when the focal spot is far smaller than the
//! lens-plane pitch.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{fft2, ifft2, signed_bin};
use crate::field::{apply_aperture, make_plane_wave, ComplexField, FieldGrid};
use crate::lens::{build_transmission, LensDesign};
use crate::raster::{self, DType, RasterHeader};
use crate::units::{as_mm, vec_as_nm};

/// Largest distance the transfer-function evaluator accepts: `N * pitch^2 / lambda`.
pub fn tf_distance_limit(grid: &FieldGrid, wavelength: f64) -> f64 {
    let n = grid.samples_x.min(grid.samples_y) as f64;
    n * grid.pitch * grid.pitch / wavelength
}

/// `exp(ikz) * exp(-i pi lambda z (fx^2 + fy^2))`, FFT layout.
pub fn transfer_function(grid: &FieldGrid, wavelength: f64, distance: f64) -> Array2<Complex64> {
    let (ny, nx) = grid.shape();
    let global = Complex64::from_polar(1.0, TAU / wavelength * distance);
    let chirp = |k: usize, n: usize| {
        let f = signed_bin(k, n) / (n as f64 * grid.pitch);
        Complex64::from_polar(1.0, -PI * wavelength * distance * f * f)
    };
    let hx: Vec<Complex64> = (0..nx).map(|k| chirp(k, nx)).collect();
    let hy: Vec<Complex64> = (0..ny).map(|k| chirp(k, ny)).collect();
    Array2::from_shape_fn((ny, nx), |(j, i)| global * hy[j] * hx[i])
}

/// Same-grid Fresnel propagation by the transfer-function method.
pub fn fresnel_propagate(field: &ComplexField, distance: f64) -> Result<ComplexField> {
    if !(distance > 0.0 && distance.is_finite()) {
        return Err(Error::InvalidArgument(format!("propagation distance must be positive, got {distance}")));
    }
    let limit = tf_distance_limit(&field.grid, field.wavelength);
    if distance > limit {
        return Err(Error::Aliasing { distance_um: distance, limit_um: limit });
    }
    let h = transfer_function(&field.grid, field.wavelength, distance);
    let mut spec = field.values.clone();
    fft2(&mut spec);
    spec *= &h;
    ifft2(&mut spec);
    ComplexField::new(field.grid, spec, field.wavelength)
}

/// Direct Fresnel integral of `field` evaluated at the output points
/// `xs` x `ys` (micrometres) on the plane at `distance`.
///
/// `E(x,y) = e^{ikz}/(i lambda z) e^{ik(x^2+y^2)/2z} sum E0 e^{ik(u^2+v^2)/2z} e^{-ik(xu+yv)/z} du dv`,
/// evaluated as a separable matrix product.
pub fn fresnel_direct(field: &ComplexField, distance: f64, xs: &[f64], ys: &[f64]) -> Result<Array2<Complex64>> {
    if !(distance > 0.0 && distance.is_finite()) {
        return Err(Error::InvalidArgument(format!("propagation distance must be positive, got {distance}")));
    }
    let g = &field.grid;
    let k = TAU / field.wavelength;
    let us = g.xs();
    let vs = g.ys();
    let cu: Vec<Complex64> = us.iter().map(|u| Complex64::from_polar(1.0, k * u * u / (2.0 * distance))).collect();
    let cv: Vec<Complex64> = vs.iter().map(|v| Complex64::from_polar(1.0, k * v * v / (2.0 * distance))).collect();
    let kernel = |out: &[f64], inp: &[f64]| -> Vec<Vec<Complex64>> {
        out.iter()
            .map(|x| inp.iter().map(|u| Complex64::from_polar(1.0, -k * x * u / distance)).collect())
            .collect()
    };
    let ax = kernel(xs, &us);
    let ay = kernel(ys, &vs);

    // B[v, x] = sum_u E0[v, u] cu[u] cv[v] Ax[x, u]
    let rows: Vec<Option<Vec<Complex64>>> = (0..g.samples_y)
        .into_par_iter()
        .map(|j| {
            let row = field.values.row(j);
            if row.iter().all(|v| v.re == 0.0 && v.im == 0.0) {
                return None;
            }
            let weighted: Vec<Complex64> = row.iter().zip(&cu).map(|(e, c)| e * c * cv[j]).collect();
            Some(ax.iter().map(|a| a.iter().zip(&weighted).map(|(p, q)| p * q).sum()).collect())
        })
        .collect();

    let scale = Complex64::from_polar(1.0, k * distance) / Complex64::new(0.0, field.wavelength * distance)
        * g.sample_area();
    let out: Vec<Complex64> = ys
        .par_iter()
        .enumerate()
        .flat_map_iter(|(yi, &y)| {
            let rows = &rows;
            let ay = &ay[yi];
            xs.iter().enumerate().map(move |(xi, &x)| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (j, r) in rows.iter().enumerate() {
                    if let Some(r) = r {
                        acc += ay[j] * r[xi];
                    }
                }
                acc * scale * Complex64::from_polar(1.0, k * (x * x + y * y) / (2.0 * distance))
            })
        })
        .collect();
    Ok(Array2::from_shape_vec((ys.len(), xs.len()), out).expect("window shape"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    #[default]
    UnitSum,
    PeakOne,
    Raw,
}

/// Output window of a PSF simulation, centred on the optical axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsfWindow {
    pub samples: usize,
    /// Micrometres.
    pub pitch: f64,
    /// Sub-samples per axis averaged into each output sample (pixel integration).
    pub oversample: usize,
}

impl Default for PsfWindow {
    fn default() -> Self {
        Self { samples: 64, pitch: 0.5, oversample: 1 }
    }
}

impl PsfWindow {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.oversample == 0 || !(self.pitch > 0.0 && self.pitch.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid PSF window {self:?}")));
        }
        Ok(())
    }

    /// Coordinate of output sample `s`; sample `samples/2` sits on the axis.
    pub fn coord(&self, s: usize) -> f64 {
        (s as f64 - (self.samples / 2) as f64) * self.pitch
    }

    fn sub_coords(&self) -> Vec<f64> {
        let os = self.oversample;
        (0..self.samples)
            .flat_map(|s| {
                let c = self.coord(s);
                (0..os).map(move |t| c + ((t as f64 + 0.5) / os as f64 - 0.5) * self.pitch)
            })
            .collect()
    }

    fn half_width(&self) -> f64 {
        let n = self.samples as f64;
        (0.5 * n + 0.5) * self.pitch
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsfOptions {
    pub window: PsfWindow,
    pub normalization: Normalization,
    /// Plane-wave amplitude at the lens.
    pub amplitude: f64,
}

impl Default for PsfOptions {
    fn default() -> Self {
        Self { window: PsfWindow::default(), normalization: Normalization::UnitSum, amplitude: 1.0 }
    }
}

/// Lens-plane grid that covers the aperture with a 2% margin.
pub fn default_lens_grid(design: &LensDesign, samples: usize) -> Result<FieldGrid> {
    FieldGrid::square(samples, design.diameter * 1.02 / samples as f64)
}

#[derive(Debug, Clone)]
pub struct Psf {
    pub wavelength: f64,
    pub raster: Array2<f64>,
    pub pitch: f64,
    /// Micrometres from the optical axis.
    pub centroid: (f64, f64),
    /// Peak of the un-normalized intensity.
    pub raw_peak: f64,
}

/// Largest phase step per lens-plane sample of the integrand of the direct
/// Fresnel sum, for a window reaching `x_max` off axis.
pub fn direct_phase_step(design: &LensDesign, wavelength: f64, distance: f64, grid: &FieldGrid, x_max: f64) -> Result<f64> {
    let k = TAU / wavelength;
    let r_max = design.radius().min(0.5 * grid.extent().0.max(grid.extent().1) * std::f64::consts::SQRT_2);
    let steps = 2048;
    let mut worst = 0.0f64;
    for s in 0..=steps {
        let r = r_max * s as f64 / steps as f64;
        let slope = design.target_phase_slope(r, wavelength)? + k * r / distance;
        worst = worst.max(slope.abs());
    }
    Ok((worst + k * x_max * std::f64::consts::SQRT_2 / distance) * grid.pitch)
}

fn check_direct_sampling(design: &LensDesign, wavelength: f64, distance: f64, grid: &FieldGrid, x_max: f64) -> Result<()> {
    let step = direct_phase_step(design, wavelength, distance, grid, x_max)?;
    if step > PI {
        return Err(Error::UnderSampled { pitch_um: grid.pitch, required_pitch_um: grid.pitch * PI / step });
    }
    Ok(())
}

/// Plane wave through the aperture and lens mask.
pub fn lens_exit_field(design: &LensDesign, wavelength: f64, grid: FieldGrid, amplitude: f64) -> Result<ComplexField> {
    let wave = make_plane_wave(grid, wavelength, amplitude)?;
    let apertured = apply_aperture(&wave, design.radius())?;
    let t = build_transmission(design, grid, wavelength)?;
    let mut field = apertured.field;
    field.values *= &t.values;
    Ok(field)
}

pub fn psf_at(design: &LensDesign, wavelength: f64, sensor_distance: f64, grid: FieldGrid, opts: &PsfOptions) -> Result<Psf> {
    opts.window.validate()?;
    if !(sensor_distance > 0.0) {
        return Err(Error::InvalidArgument(format!("sensor distance must be positive, got {sensor_distance}")));
    }
    check_direct_sampling(design, wavelength, sensor_distance, &grid, opts.window.half_width())?;
    let field = lens_exit_field(design, wavelength, grid, opts.amplitude)?;
    let coords = opts.window.sub_coords();
    let e = fresnel_direct(&field, sensor_distance, &coords, &coords)?;
    let n = opts.window.samples;
    let os = opts.window.oversample;
    let inv = 1.0 / (os * os) as f64;
    let mut raster = Array2::<f64>::zeros((n, n));
    for ((j, i), v) in e.indexed_iter() {
        raster[[j / os, i / os]] += v.norm_sqr() * inv;
    }
    let raw_peak = raster.iter().cloned().fold(0.0, f64::max);
    normalize(&mut raster, opts.normalization);
    let centroid = centroid_of(&raster, opts.window.pitch);
    Ok(Psf { wavelength, raster, pitch: opts.window.pitch, centroid, raw_peak })
}

pub fn normalize(raster: &mut Array2<f64>, mode: Normalization) {
    match mode {
        Normalization::Raw => {}
        Normalization::UnitSum => {
            let s: f64 = raster.sum();
            if s > 0.0 {
                raster.mapv_inplace(|v| v / s);
            }
        }
        Normalization::PeakOne => {
            let m = raster.iter().cloned().fold(0.0, f64::max);
            if m > 0.0 {
                raster.mapv_inplace(|v| v / m);
            }
        }
    }
}

/// Intensity-weighted centroid in micrometres, sample `n/2` at the origin.
pub fn centroid_of(raster: &Array2<f64>, pitch: f64) -> (f64, f64) {
    let (ny, nx) = raster.dim();
    let (mut s, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for ((j, i), &v) in raster.indexed_iter() {
        s += v;
        sx += v * (i as f64 - (nx / 2) as f64);
        sy += v * (j as f64 - (ny / 2) as f64);
    }
    if s <= 0.0 {
        return (0.0, 0.0);
    }
    (sx / s * pitch, sy / s * pitch)
}

/// Mean squared radius about the centroid, micrometres squared.
pub fn second_moment(raster: &Array2<f64>, pitch: f64) -> f64 {
    let (cx, cy) = centroid_of(raster, pitch);
    let (ny, nx) = raster.dim();
    let (mut s, mut m) = (0.0, 0.0);
    for ((j, i), &v) in raster.indexed_iter() {
        let x = (i as f64 - (nx / 2) as f64) * pitch - cx;
        let y = (j as f64 - (ny / 2) as f64) * pitch - cy;
        s += v;
        m += v * (x * x + y * y);
    }
    if s > 0.0 {
        m / s
    } else {
        0.0
    }
}

/// Radius of the first local minimum along the +x axis through the centre
/// sample, refined by a parabola through the three samples around it.
pub fn first_minimum_radius(raster: &Array2<f64>, pitch: f64) -> Option<f64> {
    let (ny, nx) = raster.dim();
    let row = raster.row(ny / 2);
    let c = nx / 2;
    for i in (c + 1)..(nx - 1) {
        let (a, b, d) = (row[i - 1], row[i], row[i + 1]);
        if b <= a && b < d {
            let denom = a - 2.0 * b + d;
            let shift = if denom > 0.0 { 0.5 * (a - d) / denom } else { 0.0 };
            return Some(((i - c) as f64 + shift) * pitch);
        }
    }
    None
}

#[derive(Debug, Clone, Serialize)]
pub struct FocalSweep {
    /// Micrometres.
    pub z: Vec<f64>,
    pub intensity: Vec<f64>,
    /// Best-focus distance after local refinement.
    pub z_best: f64,
}

struct OnAxis {
    terms: Vec<(Complex64, f64)>,
    k: f64,
    wavelength: f64,
    area: f64,
}

impl OnAxis {
    fn new(field: &ComplexField) -> Self {
        let g = field.grid;
        let (xs, ys) = (g.xs(), g.ys());
        // samples sharing a squared radius share the chirp factor; summing
        // them first turns the per-z cost into one term per distinct radius
        let mut rings: std::collections::BTreeMap<u64, Complex64> = std::collections::BTreeMap::new();
        for ((j, i), v) in field.values.indexed_iter() {
            if v.norm_sqr() > 0.0 {
                let r2 = xs[i] * xs[i] + ys[j] * ys[j];
                *rings.entry(r2.to_bits()).or_default() += v;
            }
        }
        let terms = rings.into_iter().map(|(bits, e)| (e, f64::from_bits(bits))).collect();
        Self { terms, k: TAU / field.wavelength, wavelength: field.wavelength, area: g.sample_area() }
    }

    fn intensity(&self, z: f64) -> f64 {
        let a = self.k / (2.0 * z);
        let s: Complex64 = self.terms.iter().map(|(e, r2)| e * Complex64::from_polar(1.0, a * r2)).sum();
        s.norm_sqr() * (self.area / (self.wavelength * z)).powi(2)
    }

    fn curve(&self, zs: &[f64]) -> Vec<f64> {
        zs.par_iter().map(|&z| self.intensity(z)).collect()
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// On-axis intensity over `[z_min, z_max]`; the coarse argmax is refined by
/// a dense local resample and a parabolic fit.
pub fn focal_sweep(
    design: &LensDesign,
    wavelength: f64,
    z_min: f64,
    z_max: f64,
    steps: usize,
    grid: FieldGrid,
    amplitude: f64,
) -> Result<FocalSweep> {
    if !(z_min > 0.0 && z_min < z_max) {
        return Err(Error::InvalidArgument(format!("sweep needs 0 < z_min < z_max, got [{z_min}, {z_max}]")));
    }
    if steps < 3 {
        return Err(Error::InvalidArgument(format!("sweep needs at least 3 steps, got {steps}")));
    }
    check_direct_sampling(design, wavelength, z_min, &grid, 0.0)?;
    check_direct_sampling(design, wavelength, z_max, &grid, 0.0)?;
    let axis = OnAxis::new(&lens_exit_field(design, wavelength, grid, amplitude)?);
    let z = linspace(z_min, z_max, steps);
    let intensity = axis.curve(&z);
    let i = argmax(&intensity);
    let z_best = if i == 0 || i == steps - 1 {
        z[i]
    } else {
        let fine_z = linspace(z[i - 1], z[i + 1], 41);
        let fine = axis.curve(&fine_z);
        let m = argmax(&fine);
        if m == 0 || m == fine.len() - 1 {
            fine_z[m]
        } else {
            let (a, b, c) = (fine[m - 1], fine[m], fine[m + 1]);
            let denom = a - 2.0 * b + c;
            let shift = if denom < 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
            fine_z[m] + shift * (fine_z[1] - fine_z[0])
        }
    };
    Ok(FocalSweep { z, intensity, z_best })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyVector {
    #[serde(with = "vec_as_nm")]
    pub wavelengths: Vec<f64>,
    pub efficiency: Vec<f64>,
}

impl EfficiencyVector {
    pub fn new(wavelengths: Vec<f64>, efficiency: Vec<f64>) -> Result<Self> {
        let v = Self { wavelengths, efficiency };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if self.wavelengths.is_empty() || self.wavelengths.len() != self.efficiency.len() {
            return Err(Error::dim("efficiency", self.wavelengths.len(), self.efficiency.len()));
        }
        if self.efficiency.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return Err(Error::InvalidArgument("efficiency entries must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Tabulated focusing efficiencies for seven colours from 650 nm to 410 nm.
    pub fn reference_table() -> Self {
        Self {
            wavelengths: vec![0.650, 0.610, 0.570, 0.532, 0.490, 0.450, 0.410],
            efficiency: vec![0.3524, 0.5281, 0.7371, 0.9920, 0.7032, 0.1885, 0.1738],
        }
    }

    pub fn uniform(wavelengths: Vec<f64>) -> Self {
        let efficiency = vec![1.0; wavelengths.len()];
        Self { wavelengths, efficiency }
    }

    /// Entry within half a nanometre of `wavelength`.
    pub fn at(&self, wavelength: f64) -> Option<f64> {
        wavelength_index(&self.wavelengths, wavelength).map(|i| self.efficiency[i])
    }
}

/// Index of the entry within half a nanometre of `wavelength`.
pub fn wavelength_index(list: &[f64], wavelength: f64) -> Option<usize> {
    list.iter().position(|&w| (w - wavelength).abs() <= 5e-4)
}

/// Raw focal-plane peaks normalized by their maximum.
pub fn channel_efficiency(
    design: &LensDesign,
    wavelengths: &[f64],
    sensor_distance: f64,
    grid: FieldGrid,
    window: PsfWindow,
) -> Result<(EfficiencyVector, Vec<f64>)> {
    if wavelengths.is_empty() {
        return Err(Error::InvalidArgument("channel_efficiency needs at least one wavelength".into()));
    }
    let opts = PsfOptions { window, normalization: Normalization::Raw, amplitude: 1.0 };
    let peaks: Vec<f64> = wavelengths
        .par_iter()
        .map(|&l| psf_at(design, l, sensor_distance, grid, &opts).map(|p| p.raw_peak))
        .collect::<Result<_>>()?;
    let max = peaks.iter().cloned().fold(0.0, f64::max);
    let eff = peaks.iter().map(|p| if max > 0.0 { p / max } else { 0.0 }).collect();
    Ok((EfficiencyVector::new(wavelengths.to_vec(), eff)?, peaks))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsfStack {
    /// Micrometres.
    pub wavelengths: Vec<f64>,
    pub psfs: Vec<Array2<f64>>,
    /// Micrometres per raster sample.
    pub pitch: f64,
    /// Micrometres.
    pub sensor_distance: f64,
    pub centroids: Vec<(f64, f64)>,
    pub normalization: Normalization,
}

#[derive(Serialize, Deserialize)]
struct StackMeta {
    #[serde(with = "vec_as_nm")]
    wavelengths: Vec<f64>,
    pitch_um: f64,
    #[serde(with = "as_mm")]
    sensor_distance: f64,
    normalization: Normalization,
    centroids_um: Vec<(f64, f64)>,
}

impl PsfStack {
    pub fn from_rasters(
        wavelengths: Vec<f64>,
        mut psfs: Vec<Array2<f64>>,
        pitch: f64,
        sensor_distance: f64,
        normalization: Normalization,
    ) -> Result<Self> {
        for p in &mut psfs {
            normalize(p, normalization);
        }
        let centroids = psfs.iter().map(|p| centroid_of(p, pitch)).collect();
        let s = Self { wavelengths, psfs, pitch, sensor_distance, centroids, normalization };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.wavelengths.len();
        if n == 0 || self.psfs.len() != n || self.centroids.len() != n {
            return Err(Error::dim("psf stack", n, self.psfs.len()));
        }
        let shape = self.psfs[0].dim();
        for (i, p) in self.psfs.iter().enumerate() {
            if p.dim() != shape {
                return Err(Error::dim("psf raster", format!("{shape:?}"), format!("{:?}", p.dim())));
            }
            if p.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::InvalidArgument("psf rasters must be finite and non-negative".into()));
            }
            if self.normalization == Normalization::UnitSum && (p.sum() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("psf {i} is not unit-sum")));
            }
            let c = centroid_of(p, self.pitch);
            let d = (c.0 - self.centroids[i].0).hypot(c.1 - self.centroids[i].1);
            if d > self.pitch {
                return Err(Error::InvalidArgument(format!("psf {i} stored centroid disagrees with raster")));
            }
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize) {
        self.psfs[0].dim()
    }

    pub fn index_of(&self, wavelength: f64) -> Option<usize> {
        wavelength_index(&self.wavelengths, wavelength)
    }

    pub fn get(&self, wavelength: f64) -> Option<&Array2<f64>> {
        self.index_of(wavelength).map(|i| &self.psfs[i])
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let (ny, nx) = self.shape();
        let meta = StackMeta {
            wavelengths: self.wavelengths.clone(),
            pitch_um: self.pitch,
            sensor_distance: self.sensor_distance,
            normalization: self.normalization,
            centroids_um: self.centroids.clone(),
        };
        let header = RasterHeader::new("psf_stack", DType::F32, vec![self.psfs.len(), ny, nx], serde_json::to_value(meta)?);
        let payload: Vec<f32> = self.psfs.iter().flat_map(|p| p.iter().map(|&v| v as f32)).collect();
        raster::write_file(path, &header, &payload)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (h, data) = raster::read_kind(path, "psf_stack")?;
        if h.dtype != DType::F32 || h.shape.len() != 3 {
            return Err(Error::Format("psf_stack must be a 3-D f32 raster".into()));
        }
        let meta: StackMeta = serde_json::from_value(h.meta.clone())?;
        let cube = Array3::from_shape_vec((h.shape[0], h.shape[1], h.shape[2]), data.into_iter().map(f64::from).collect())
            .map_err(|e| Error::Format(e.to_string()))?;
        let psfs: Vec<Array2<f64>> = cube.outer_iter().map(|p| p.to_owned()).collect();
        // f32 storage perturbs unit sums at ~1e-7; renormalize on load
        Self::from_rasters(meta.wavelengths, psfs, meta.pitch_um, meta.sensor_distance, meta.normalization)
    }
}

/// One `psf_at` per wavelength, evaluated in parallel.
pub fn simulate_stack(
    design: &LensDesign,
    wavelengths: &[f64],
    sensor_distance: f64,
    grid: FieldGrid,
    opts: &PsfOptions,
) -> Result<PsfStack> {
    let psfs: Vec<Psf> = wavelengths
        .par_iter()
        .map(|&l| psf_at(design, l, sensor_distance, grid, opts))
        .collect::<Result<_>>()?;
    PsfStack::from_rasters(
        wavelengths.to_vec(),
        psfs.into_iter().map(|p| p.raster).collect(),
        opts.window.pitch,
        sensor_distance,
        opts.normalization,
    )
}
