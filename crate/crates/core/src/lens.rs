//! Metalens phase profiles and complex transmission masks.
//!
//! Lengths are micrometres internally; JSON documents carry explicit units.

use std::f64::consts::{PI, TAU};

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ComplexField, FieldGrid};
use crate::units::{as_mm, as_nm, vec_as_nm};

pub const LENS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PhaseMode {
    #[default]
    Ideal,
    Achromatic,
    Lut,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FocalScaling {
    /// `f = f0 * lambda0 / lambda`
    #[default]
    Diffractive,
    /// `f = f0 * lambda / lambda0`
    Proportional,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AchromaticDesign {
    #[serde(with = "as_nm")]
    pub lambda_min: f64,
    #[serde(with = "as_nm")]
    pub lambda_max: f64,
    /// Maximum additional phase shift, radians.
    pub delta: f64,
}

impl AchromaticDesign {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_min > 0.0 && self.lambda_min < self.lambda_max) {
            return Err(Error::InvalidArgument(format!(
                "achromatic band needs 0 < lambda_min < lambda_max, got [{}, {}] um",
                self.lambda_min, self.lambda_max
            )));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidArgument(format!("achromatic delta must be >= 0, got {}", self.delta)));
        }
        Ok(())
    }
}

fn default_period() -> f64 {
    0.280
}

fn default_height() -> f64 {
    0.850
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaAtomLut {
    #[serde(with = "vec_as_nm")]
    pub diameters: Vec<f64>,
    /// Radians.
    pub phase: Vec<f64>,
    pub transmission: Vec<f64>,
    #[serde(with = "as_nm", default = "default_period")]
    pub period: f64,
    #[serde(with = "as_nm", default = "default_height")]
    pub height: f64,
}

impl MetaAtomLut {
    pub fn new(diameters: Vec<f64>, phase: Vec<f64>, transmission: Vec<f64>) -> Result<Self> {
        let lut = Self { diameters, phase, transmission, period: default_period(), height: default_height() };
        lut.validate()?;
        Ok(lut)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.diameters.len();
        if n < 2 || self.phase.len() != n || self.transmission.len() != n {
            return Err(Error::InvalidArgument(format!(
                "meta-atom table needs >= 2 entries of equal length, got {}/{}/{}",
                n,
                self.phase.len(),
                self.transmission.len()
            )));
        }
        if self.transmission.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::InvalidArgument("meta-atom transmission must lie in [0, 1]".into()));
        }
        if self.phase.iter().chain(&self.diameters).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("meta-atom table has non-finite entries".into()));
        }
        if !(self.period > 0.0 && self.height > 0.0) {
            return Err(Error::InvalidArgument("meta-atom period and height must be positive".into()));
        }
        if self.diameters.iter().any(|&d| !(0.1..=0.185).contains(&d)) {
            log::warn!("meta-atom diameters outside the 100-185 nm fabrication range");
        }
        if self.unwrapped_span() < TAU {
            log::warn!("meta-atom phases span less than 2 pi; some target phases will be poorly matched");
        }
        Ok(())
    }

    /// Span of the phase column after unwrapping in diameter order.
    pub fn unwrapped_span(&self) -> f64 {
        let order = self.diameter_order();
        let mut prev = self.phase[order[0]];
        let (mut lo, mut hi) = (prev, prev);
        for &i in &order[1..] {
            let mut p = self.phase[i];
            while p - prev > PI {
                p -= TAU;
            }
            while p - prev < -PI {
                p += TAU;
            }
            lo = lo.min(p);
            hi = hi.max(p);
            prev = p;
        }
        hi - lo
    }

    fn diameter_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.diameters.len()).collect();
        order.sort_by(|&a, &b| self.diameters[a].total_cmp(&self.diameters[b]));
        order
    }

    /// Nearest entry by circular phase distance; ties go to the smaller diameter.
    pub fn nearest(&self, target: f64) -> usize {
        let t = target.rem_euclid(TAU);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, &p) in self.phase.iter().enumerate() {
            let d = (p.rem_euclid(TAU) - t).abs();
            let d = d.min(TAU - d);
            let closer = d < best_d - 1e-12;
            let tie = (d - best_d).abs() <= 1e-12 && self.diameters[i] < self.diameters[best];
            if closer || tie {
                best = i;
                best_d = d;
            }
        }
        best
    }

    pub fn lookup(&self, target: f64) -> Complex64 {
        let i = self.nearest(target);
        Complex64::from_polar(self.transmission[i], self.phase[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LensDesign {
    #[serde(default = "lens_version")]
    pub format_version: u32,
    #[serde(with = "as_mm")]
    pub diameter: f64,
    #[serde(with = "as_mm")]
    pub focal_length_design: f64,
    #[serde(with = "as_nm")]
    pub wavelength_design: f64,
    #[serde(default)]
    pub phase_mode: PhaseMode,
    #[serde(default)]
    pub focal_scaling_mode: FocalScaling,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub achromatic: Option<AchromaticDesign>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lut: Option<MetaAtomLut>,
}

fn lens_version() -> u32 {
    LENS_FORMAT_VERSION
}

impl LensDesign {
    /// Ideal-mode, diffractive-scaling lens. All lengths in micrometres.
    pub fn new(diameter: f64, focal_length: f64, wavelength: f64) -> Result<Self> {
        let d = Self {
            format_version: LENS_FORMAT_VERSION,
            diameter,
            focal_length_design: focal_length,
            wavelength_design: wavelength,
            phase_mode: PhaseMode::Ideal,
            focal_scaling_mode: FocalScaling::Diffractive,
            achromatic: None,
            lut: None,
        };
        d.validate()?;
        Ok(d)
    }

    /// 2.6 mm aperture, 10 mm focal length, 532 nm.
    pub fn reference() -> Self {
        Self::new(2600.0, 10_000.0, 0.532).expect("reference lens is valid")
    }

    pub fn radius(&self) -> f64 {
        0.5 * self.diameter
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != LENS_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported lens format_version {}", self.format_version)));
        }
        if !(self.diameter > 0.0 && self.diameter.is_finite()) {
            return Err(Error::InvalidArgument(format!("diameter must be positive, got {} um", self.diameter)));
        }
        if !(self.focal_length_design > 0.0 && self.focal_length_design.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "focal length must be positive, got {} um",
                self.focal_length_design
            )));
        }
        if !(self.wavelength_design > 0.380 && self.wavelength_design < 0.750) {
            return Err(Error::InvalidArgument(format!(
                "design wavelength must lie in (380, 750) nm, got {} nm",
                self.wavelength_design * 1e3
            )));
        }
        match self.phase_mode {
            PhaseMode::Achromatic => {
                self.achromatic
                    .as_ref()
                    .ok_or_else(|| Error::Configuration("achromatic phase mode requires an achromatic block".into()))?
                    .validate()?;
            }
            PhaseMode::Lut => {
                self.lut
                    .as_ref()
                    .ok_or_else(|| Error::Configuration("lut phase mode requires a meta-atom table".into()))?
                    .validate()?;
            }
            PhaseMode::Ideal => {}
        }
        Ok(())
    }

    /// Target (continuous) lens phase at radius `r` for wavelength `wavelength`.
    pub fn target_phase(&self, r: f64, wavelength: f64) -> Result<f64> {
        match self.phase_mode {
            PhaseMode::Ideal | PhaseMode::Lut => {
                Ok(focusing_phase(r, wavelength, focal_length_at(self, wavelength)))
            }
            PhaseMode::Achromatic => {
                let a = self.achromatic.as_ref().ok_or_else(|| {
                    Error::Configuration("achromatic phase mode requires an achromatic block".into())
                })?;
                let f = self.focal_length_design;
                Ok(focusing_phase(r, a.lambda_max, f) + achromatic_delta_phase(r, wavelength, a, f)?)
            }
        }
    }

    /// Radial derivative of [`Self::target_phase`], used by sampling checks.
    pub fn target_phase_slope(&self, r: f64, wavelength: f64) -> Result<f64> {
        let slope = |lam: f64, f: f64| -TAU / lam * r / (r * r + f * f).sqrt();
        match self.phase_mode {
            PhaseMode::Ideal | PhaseMode::Lut => Ok(slope(wavelength, focal_length_at(self, wavelength))),
            PhaseMode::Achromatic => {
                let a = self.achromatic.as_ref().ok_or_else(|| {
                    Error::Configuration("achromatic phase mode requires an achromatic block".into())
                })?;
                check_band(wavelength, a)?;
                let f = self.focal_length_design;
                // d/dr of phi(r, lmax) + the r-dependent term of delta
                let base = slope(a.lambda_max, f);
                let geo = -TAU * r / (r * r + f * f).sqrt() * (1.0 / wavelength - 1.0 / a.lambda_max);
                Ok(base + geo)
            }
        }
    }
}

/// `-(2 pi / lambda) (sqrt(r^2 + f^2) - f)`
pub fn focusing_phase(r: f64, wavelength: f64, focal_length: f64) -> f64 {
    // r^2 / (sqrt(r^2 + f^2) + f) avoids cancellation near the axis
    let sag = r * r / ((r * r + focal_length * focal_length).sqrt() + focal_length);
    -TAU / wavelength * sag
}

fn check_band(wavelength: f64, a: &AchromaticDesign) -> Result<()> {
    if wavelength < a.lambda_min || wavelength > a.lambda_max {
        return Err(Error::OutOfBand {
            wavelength_nm: wavelength * 1e3,
            min_nm: a.lambda_min * 1e3,
            max_nm: a.lambda_max * 1e3,
        });
    }
    Ok(())
}

pub fn achromatic_delta_phase(r: f64, wavelength: f64, design: &AchromaticDesign, focal_length: f64) -> Result<f64> {
    check_band(wavelength, design)?;
    let (lmin, lmax, delta) = (design.lambda_min, design.lambda_max, design.delta);
    let sag = r * r / ((r * r + focal_length * focal_length).sqrt() + focal_length);
    let geo = -TAU * sag * (1.0 / wavelength - 1.0 / lmax);
    let band = lmax - lmin;
    Ok(geo + delta / wavelength * (lmin * lmax / band) - delta * lmin / band)
}

pub fn focal_length_at(design: &LensDesign, wavelength: f64) -> f64 {
    let (f0, l0) = (design.focal_length_design, design.wavelength_design);
    match design.focal_scaling_mode {
        FocalScaling::Diffractive => f0 * l0 / wavelength,
        FocalScaling::Proportional => f0 * wavelength / l0,
    }
}

/// Complex transmission `T(u, v)` on `grid`, zero outside the lens radius.
pub fn build_transmission(design: &LensDesign, grid: FieldGrid, wavelength: f64) -> Result<ComplexField> {
    design.validate()?;
    grid.validate()?;
    let required = design.diameter / 64.0;
    if grid.pitch > required {
        return Err(Error::UnderSampled { pitch_um: grid.pitch, required_pitch_um: required });
    }
    if let Some(a) = design.achromatic.as_ref().filter(|_| design.phase_mode == PhaseMode::Achromatic) {
        check_band(wavelength, a)?;
    }
    let xs = grid.xs();
    let ys = grid.ys();
    let radius = design.radius();
    let mut values = Array2::<Complex64>::zeros(grid.shape());
    for ((j, i), v) in values.indexed_iter_mut() {
        let r = xs[i].hypot(ys[j]);
        if r > radius {
            continue;
        }
        let phi = design.target_phase(r, wavelength)?;
        *v = match design.phase_mode {
            PhaseMode::Lut => design
                .lut
                .as_ref()
                .ok_or_else(|| Error::Configuration("lut phase mode requires a meta-atom table".into()))?
                .lookup(phi),
            _ => Complex64::from_polar(1.0, phi),
        };
    }
    ComplexField::new(grid, values, wavelength)
}
