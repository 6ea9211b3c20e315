//! Complex scalar fields sampled on uniform physical grids.
//!
//! Grid convention: sample `(i, j)` (column `i`, row `j`) sits at
//! `origin + (i - n/2) * pitch` with integer division, so for even `n` the
//! zero-coordinate sample is index `n/2`, the same place FFT shifts put DC.

use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{self, DType, RasterHeader};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldGrid {
    pub samples_x: usize,
    pub samples_y: usize,
    /// Micrometres per sample.
    pub pitch: f64,
    /// Physical coordinates of the centre sample, micrometres.
    pub origin: (f64, f64),
}

impl FieldGrid {
    pub fn new(samples_x: usize, samples_y: usize, pitch: f64) -> Result<Self> {
        Self::with_origin(samples_x, samples_y, pitch, (0.0, 0.0))
    }

    pub fn square(samples: usize, pitch: f64) -> Result<Self> {
        Self::new(samples, samples, pitch)
    }

    pub fn with_origin(samples_x: usize, samples_y: usize, pitch: f64, origin: (f64, f64)) -> Result<Self> {
        let g = Self { samples_x, samples_y, pitch, origin };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples_x < 2 || self.samples_y < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 2x2 samples, got {}x{}",
                self.samples_x, self.samples_y
            )));
        }
        if !(self.pitch > 0.0 && self.pitch.is_finite()) {
            return Err(Error::InvalidArgument(format!("grid pitch must be positive, got {}", self.pitch)));
        }
        Ok(())
    }

    pub fn x(&self, i: usize) -> f64 {
        self.origin.0 + (i as f64 - (self.samples_x / 2) as f64) * self.pitch
    }

    pub fn y(&self, j: usize) -> f64 {
        self.origin.1 + (j as f64 - (self.samples_y / 2) as f64) * self.pitch
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.samples_x).map(|i| self.x(i)).collect()
    }

    pub fn ys(&self) -> Vec<f64> {
        (0..self.samples_y).map(|j| self.y(j)).collect()
    }

    /// Physical extent `(samples_x * pitch, samples_y * pitch)`.
    pub fn extent(&self) -> (f64, f64) {
        (self.samples_x as f64 * self.pitch, self.samples_y as f64 * self.pitch)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.samples_y, self.samples_x)
    }

    pub fn sample_area(&self) -> f64 {
        self.pitch * self.pitch
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    pub grid: FieldGrid,
    /// Row-major `[y, x]`.
    pub values: Array2<Complex64>,
    /// Micrometres.
    pub wavelength: f64,
}

impl ComplexField {
    pub fn new(grid: FieldGrid, values: Array2<Complex64>, wavelength: f64) -> Result<Self> {
        grid.validate()?;
        if values.dim() != grid.shape() {
            return Err(Error::dim("field values", format!("{:?}", grid.shape()), format!("{:?}", values.dim())));
        }
        check_wavelength(wavelength)?;
        Ok(Self { grid, values, wavelength })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let header = RasterHeader::new(
            "complex_field",
            DType::C32,
            vec![self.grid.samples_y, self.grid.samples_x],
            serde_json::json!({
                "pitch": self.grid.pitch,
                "origin": [self.grid.origin.0, self.grid.origin.1],
                "wavelength": self.wavelength,
                "units": "um",
            }),
        );
        let mut payload = Vec::with_capacity(2 * self.values.len());
        for v in self.values.iter() {
            payload.push(v.re as f32);
            payload.push(v.im as f32);
        }
        raster::write_file(path, &header, &payload)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (h, data) = raster::read_kind(path, "complex_field")?;
        if h.dtype != DType::C32 || h.shape.len() != 2 {
            return Err(Error::Format("complex_field must be a 2-D c32 raster".into()));
        }
        let meta = &h.meta;
        let num = |k: &str| -> Result<f64> {
            meta.get(k).and_then(|v| v.as_f64()).ok_or_else(|| Error::Format(format!("missing `{k}`")))
        };
        let origin = meta
            .get("origin")
            .and_then(|o| o.as_array())
            .and_then(|o| Some((o.first()?.as_f64()?, o.get(1)?.as_f64()?)))
            .unwrap_or((0.0, 0.0));
        let grid = FieldGrid::with_origin(h.shape[1], h.shape[0], num("pitch")?, origin)?;
        let values = Array2::from_shape_vec(
            (h.shape[0], h.shape[1]),
            data.chunks_exact(2).map(|c| Complex64::new(c[0] as f64, c[1] as f64)).collect(),
        )
        .map_err(|e| Error::Format(e.to_string()))?;
        Self::new(grid, values, num("wavelength")?)
    }
}

fn check_wavelength(wavelength: f64) -> Result<()> {
    if !(wavelength > 0.0 && wavelength.is_finite()) {
        return Err(Error::InvalidArgument(format!("wavelength must be positive, got {wavelength}")));
    }
    Ok(())
}

/// Uniform field `amplitude + 0i` with zero phase.
pub fn make_plane_wave(grid: FieldGrid, wavelength: f64, amplitude: f64) -> Result<ComplexField> {
    grid.validate()?;
    check_wavelength(wavelength)?;
    if !(amplitude >= 0.0 && amplitude.is_finite()) {
        return Err(Error::InvalidArgument(format!("amplitude must be non-negative, got {amplitude}")));
    }
    let values = Array2::from_elem(grid.shape(), Complex64::new(amplitude, 0.0));
    Ok(ComplexField { grid, values, wavelength })
}

#[derive(Debug, Clone)]
pub struct ApertureOutcome {
    pub field: ComplexField,
    /// Set when the aperture radius exceeds the grid half-extent, i.e. the
    /// grid edge rather than the aperture bounds the field.
    pub clipped: bool,
}

/// Binary circular aperture centred on the physical origin.
pub fn aperture_mask(grid: &FieldGrid, radius: f64) -> Array2<bool> {
    let xs = grid.xs();
    let ys = grid.ys();
    let r2 = radius * radius;
    Array2::from_shape_fn(grid.shape(), |(j, i)| xs[i] * xs[i] + ys[j] * ys[j] <= r2)
}

pub fn apply_aperture(field: &ComplexField, radius: f64) -> Result<ApertureOutcome> {
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("aperture radius must be positive, got {radius}")));
    }
    let mask = aperture_mask(&field.grid, radius);
    let mut out = field.clone();
    ndarray::Zip::from(&mut out.values).and(&mask).for_each(|v, &inside| {
        if !inside {
            *v = Complex64::new(0.0, 0.0);
        }
    });
    let (ex, ey) = field.grid.extent();
    let clipped = radius > 0.5 * ex.min(ey);
    if clipped {
        log::warn!("aperture radius {radius} um exceeds grid half-extent; aperture clipped by grid");
    }
    Ok(ApertureOutcome { field: out, clipped })
}

/// `sum |E|^2 * pitch^2`.
pub fn total_energy(field: &ComplexField) -> f64 {
    field.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * field.grid.sample_area()
}

pub fn intensity_map(field: &ComplexField) -> Array2<f64> {
    field.values.mapv(|v| v.norm_sqr())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const GREEN: f64 = 0.532;

    #[test]
    fn plane_wave_is_uniform() {
        let f = make_plane_wave(FieldGrid::square(4, 1.0).unwrap(), GREEN, 1.0).unwrap();
        assert!(f.values.iter().all(|v| *v == Complex64::new(1.0, 0.0)));
        let z = make_plane_wave(FieldGrid::square(4, 1.0).unwrap(), GREEN, 0.0).unwrap();
        assert_eq!(total_energy(&z), 0.0);
    }

    #[test]
    fn plane_wave_energy_is_area() {
        let f = make_plane_wave(FieldGrid::square(256, 10.0).unwrap(), GREEN, 1.0).unwrap();
        assert_eq!(total_energy(&f), 256.0 * 256.0 * 100.0);
    }

    #[test]
    fn invalid_inputs() {
        let g = FieldGrid::square(4, 1.0).unwrap();
        assert!(make_plane_wave(g, 0.0, 1.0).is_err());
        assert!(make_plane_wave(g, -1.0, 1.0).is_err());
        assert!(make_plane_wave(g, GREEN, -1.0).is_err());
        assert!(FieldGrid::square(1, 1.0).is_err());
        assert!(FieldGrid::square(4, 0.0).is_err());
    }

    #[test]
    fn coordinates_follow_centre_convention() {
        let g = FieldGrid::square(4, 2.0).unwrap();
        assert_eq!(g.xs(), vec![-4.0, -2.0, 0.0, 2.0]);
        let odd = FieldGrid::with_origin(3, 3, 1.0, (10.0, -5.0)).unwrap();
        assert_eq!(odd.xs(), vec![9.0, 10.0, 11.0]);
        assert_eq!(odd.ys(), vec![-6.0, -5.0, -4.0]);
    }

    #[test]
    fn single_sample_energy() {
        let g = FieldGrid::square(2, 1.0).unwrap();
        let mut v = Array2::zeros((2, 2));
        v[[0, 0]] = Complex64::new(2.0, 0.0);
        let f = ComplexField::new(g, v, GREEN).unwrap();
        assert_eq!(total_energy(&f), 4.0);
    }

    #[test]
    fn intensity_is_phase_invariant() {
        let g = FieldGrid::square(3, 1.0).unwrap();
        let mut v = Array2::from_elem((3, 3), Complex64::new(0.0, 1.0));
        v[[1, 2]] = Complex64::new(3.0, 4.0);
        let i = intensity_map(&ComplexField::new(g, v, GREEN).unwrap());
        assert_eq!(i[[0, 0]], 1.0);
        assert_eq!(i[[1, 2]], 25.0);
    }

    #[test]
    fn large_aperture_is_identity_and_flags_clipping() {
        let f = make_plane_wave(FieldGrid::square(8, 1.0).unwrap(), GREEN, 1.0).unwrap();
        let out = apply_aperture(&f, 100.0).unwrap();
        assert_eq!(out.field, f);
        assert!(out.clipped);
        assert!(!apply_aperture(&f, 3.0).unwrap().clipped);
        assert!(apply_aperture(&f, 0.0).is_err());
    }

    #[test]
    fn tiny_aperture_keeps_centre_only() {
        let f = make_plane_wave(FieldGrid::square(8, 1.0).unwrap(), GREEN, 1.0).unwrap();
        let out = apply_aperture(&f, 0.4).unwrap();
        let alive: Vec<_> = out.field.values.indexed_iter().filter(|(_, v)| v.norm() > 0.0).map(|(ij, _)| ij).collect();
        assert_eq!(alive, vec![(4, 4)]);
    }

    #[test]
    fn aperture_energy_fraction() {
        // 1.3 mm radius on a 4 mm grid at 10 um pitch
        let f = make_plane_wave(FieldGrid::square(400, 10.0).unwrap(), GREEN, 1.0).unwrap();
        let out = apply_aperture(&f, 1300.0).unwrap();
        let ratio = total_energy(&out.field) / total_energy(&f);
        let grid = f.grid;
        let mut count = 0usize;
        for j in 0..400 {
            for i in 0..400 {
                if grid.x(i).hypot(grid.y(j)) <= 1300.0 {
                    count += 1;
                }
            }
        }
        assert_eq!(ratio, count as f64 / 160000.0);
        let analytic = std::f64::consts::PI * 1.3 * 1.3 / 16.0;
        // one-pixel rim quantization: perimeter / pixel side over total pixels
        let rim = 2.0 * std::f64::consts::PI * 130.0 / 160000.0;
        assert!((ratio - analytic).abs() < rim, "{ratio} vs {analytic}");
    }

    #[test]
    fn serialization_roundtrip() {
        let g = FieldGrid::with_origin(3, 2, 0.5, (1.0, 2.0)).unwrap();
        let v = Array2::from_shape_fn((2, 3), |(j, i)| Complex64::new(i as f64, -(j as f64)));
        let f = ComplexField::new(g, v, GREEN).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.msr");
        f.write(&p).unwrap();
        let back = ComplexField::read(&p).unwrap();
        assert_eq!(back.grid, f.grid);
        assert_eq!(back.values, f.values);
        assert!((back.wavelength - GREEN).abs() < 1e-15);
    }

    fn random_field() -> impl Strategy<Value = ComplexField> {
        (2usize..12, 2usize..12, proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 144)).prop_map(
            |(nx, ny, vals)| {
                let g = FieldGrid::new(nx, ny, 1.5).unwrap();
                let v = Array2::from_shape_fn((ny, nx), |(j, i)| {
                    let (re, im) = vals[j * 12 + i];
                    Complex64::new(re, im)
                });
                ComplexField::new(g, v, GREEN).unwrap()
            },
        )
    }

    proptest! {
        #[test]
        fn energy_matches_naive_loop(f in random_field()) {
            let mut naive = 0.0;
            for j in 0..f.grid.samples_y {
                for i in 0..f.grid.samples_x {
                    let v = f.values[[j, i]];
                    naive += (v.re * v.re + v.im * v.im) * f.grid.pitch * f.grid.pitch;
                }
            }
            let e = total_energy(&f);
            prop_assert!((e - naive).abs() <= 1e-12 * naive.max(1e-300));
        }

        #[test]
        fn intensity_non_negative(f in random_field()) {
            prop_assert!(intensity_map(&f).iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn aperture_idempotent_and_monotone(f in random_field(), r in 0.5f64..12.0) {
            let once = apply_aperture(&f, r).unwrap().field;
            let twice = apply_aperture(&once, r).unwrap().field;
            prop_assert_eq!(&once, &twice);
            let e0 = total_energy(&f);
            let e1 = total_energy(&once);
            prop_assert!(e1 <= e0);
            let all_inside = aperture_mask(&f.grid, r).iter().all(|&m| m);
            if all_inside {
                prop_assert_eq!(e1, e0);
            }
        }
    }
}
