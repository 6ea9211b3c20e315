//! Procedural test scenes and table-calibrated Gaussian PSF stacks.

use std::f64::consts::PI;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::propagate::{EfficiencyVector, Normalization, PsfStack};

/// Gaussian stand-ins for defocused PSFs. A unit-mass Gaussian has peak
/// `1/(2 pi sigma^2)`, so matching the relative peak efficiency `T` gives
/// `sigma(l) = sigma_ref * sqrt(T_max / T(l))`. Centroids move laterally by
/// `lateral_shift * (l - l_ref) / 0.1 um` pixels along x and half that along y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianStackParams {
    /// Pixels, at the efficiency maximum.
    pub sigma_ref: f64,
    /// Pixels per 100 nm.
    pub lateral_shift: f64,
    /// Odd raster side.
    pub size: usize,
}

impl Default for GaussianStackParams {
    fn default() -> Self {
        Self { sigma_ref: 0.8, lateral_shift: 1.0, size: 21 }
    }
}

pub fn gaussian_psf(size: usize, sigma: f64, shift: [f64; 2]) -> Array2<f64> {
    let c = (size / 2) as f64;
    let mut g = Array2::from_shape_fn((size, size), |(y, x)| {
        let dx = x as f64 - c - shift[0];
        let dy = y as f64 - c - shift[1];
        (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
    });
    g /= g.sum();
    g
}

pub fn calibrated_gaussian_stack(efficiency: &EfficiencyVector, wavelengths: &[f64], params: &GaussianStackParams) -> Result<PsfStack> {
    efficiency.validate()?;
    if params.size % 2 == 0 || !(params.sigma_ref > 0.0) {
        return Err(Error::InvalidArgument("gaussian stack needs an odd size and positive sigma".into()));
    }
    let (imax, tmax) = efficiency
        .efficiency
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::MIN), |a, (i, t)| if t > a.1 { (i, t) } else { a });
    let l_ref = efficiency.wavelengths[imax];
    let psfs = wavelengths
        .iter()
        .map(|&l| {
            let t = efficiency
                .at(l)
                .ok_or_else(|| Error::Configuration(format!("efficiency vector has no entry for {} nm", l * 1e3)))?;
            if !(t > 0.0) {
                return Err(Error::InvalidArgument(format!("efficiency at {} nm must be positive", l * 1e3)));
            }
            let sigma = params.sigma_ref * (tmax / t).sqrt();
            let s = params.lateral_shift * (l - l_ref) / 0.1;
            Ok(gaussian_psf(params.size, sigma, [s, 0.5 * s]))
        })
        .collect::<Result<Vec<_>>>()?;
    PsfStack::from_rasters(wavelengths.to_vec(), psfs, 1.0, 0.0, Normalization::UnitSum)
}

pub fn checkerboard(height: usize, width: usize, cell: usize, lo: f32, hi: f32) -> ImageTensor {
    let data = Array3::from_shape_fn((3, height, width), |(_, y, x)| if (y / cell + x / cell) % 2 == 0 { hi } else { lo });
    ImageTensor::linear(data).expect("three channels")
}

fn smooth_noise(h: usize, w: usize, cell: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let (gh, gw) = (h / cell + 2, w / cell + 2);
    let lattice = Array2::from_shape_simple_fn((gh, gw), || rng.random::<f64>());
    Array2::from_shape_fn((h, w), |(y, x)| {
        let (fy, fx) = (y as f64 / cell as f64, x as f64 / cell as f64);
        let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
        let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
        let (sy, sx) = (ty * ty * (3.0 - 2.0 * ty), tx * tx * (3.0 - 2.0 * tx));
        let a = lattice[[y0, x0]] * (1.0 - sx) + lattice[[y0, x0 + 1]] * sx;
        let b = lattice[[y0 + 1, x0]] * (1.0 - sx) + lattice[[y0 + 1, x0 + 1]] * sx;
        a * (1.0 - sy) + b * sy
    })
}

fn scene(kind: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Array3<f64> {
    let tint: Vec<f64> = (0..3).map(|_| rng.random_range(0.6..1.0)).collect();
    let base: Array2<f64> = match kind % 5 {
        0 => {
            let cell = rng.random_range(6..16);
            Array2::from_shape_fn((h, w), |(y, x)| if (y / cell + x / cell) % 2 == 0 { 0.8 } else { 0.15 })
        }
        1 => {
            let (fx, fy, ph) = (rng.random_range(1.0..5.0), rng.random_range(1.0..5.0), rng.random_range(0.0..PI));
            Array2::from_shape_fn((h, w), |(y, x)| {
                0.5 + 0.3 * (2.0 * PI * fx * x as f64 / w as f64 + ph).sin() * (2.0 * PI * fy * y as f64 / h as f64).cos()
            })
        }
        2 => {
            let n = rng.random_range(3..7);
            let discs: Vec<(f64, f64, f64, f64)> = (0..n)
                .map(|_| (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64), rng.random_range(4.0..h as f64 / 3.0), rng.random_range(0.3..0.9)))
                .collect();
            Array2::from_shape_fn((h, w), |(y, x)| {
                discs.iter().fold(0.1, |v, &(cx, cy, r, val)| if (x as f64 - cx).hypot(y as f64 - cy) < r { val } else { v })
            })
        }
        3 => {
            let cell = rng.random_range(5..12);
            smooth_noise(h, w, cell, rng).mapv(|v| 0.1 + 0.8 * v)
        }
        _ => {
            let angle = rng.random_range(0.0..PI);
            let (c, s) = (angle.cos(), angle.sin());
            let period = rng.random_range(8.0..20.0);
            Array2::from_shape_fn((h, w), |(y, x)| {
                let u = x as f64 * c + y as f64 * s;
                let stripe = if (u / period).rem_euclid(1.0) < 0.5 { 0.75 } else { 0.2 };
                0.7 * stripe + 0.3 * x as f64 / w as f64
            })
        }
    };
    Array3::from_shape_fn((3, h, w), |(ch, y, x)| (base[[y, x]] * tint[ch]).clamp(0.02, 0.95))
}

/// `n` linear-light RGB scenes cycling through checkerboards, sinusoids,
/// discs, smooth value noise and oriented stripes.
pub fn test_suite(n: usize, height: usize, width: usize, seed: u64) -> Vec<(String, ImageTensor)> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let data = scene(i, height, width, &mut rng).mapv(|v| v as f32);
            (format!("scene_{i:02}"), ImageTensor::linear(data).expect("three channels"))
        })
        .collect()
}
