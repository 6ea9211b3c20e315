//! Separable 2-D FFTs over `ndarray` arrays. Unnormalized in both directions;
//! callers divide by `rows * cols` after an inverse.

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{FftDirection, FftPlanner};

fn along_rows(data: &mut Array2<Complex64>, direction: FftDirection) {
    let cols = data.ncols();
    let fft = FftPlanner::new().plan_fft(cols, direction);
    let slice = data.as_slice_mut().expect("standard layout");
    slice.par_chunks_mut(cols).for_each(|row| fft.process(row));
}

fn transform(data: &mut Array2<Complex64>, direction: FftDirection) {
    if !data.is_standard_layout() {
        *data = data.as_standard_layout().to_owned();
    }
    along_rows(data, direction);
    let mut t = data.t().as_standard_layout().to_owned();
    along_rows(&mut t, direction);
    data.assign(&t.t());
}

pub fn fft2(data: &mut Array2<Complex64>) {
    transform(data, FftDirection::Forward);
}

/// Inverse transform including the `1/(rows*cols)` normalization.
pub fn ifft2(data: &mut Array2<Complex64>) {
    transform(data, FftDirection::Inverse);
    let n = (data.nrows() * data.ncols()) as f64;
    data.mapv_inplace(|v| v / n);
}

/// Signed frequency index of FFT bin `k` of an `n`-point transform.
pub fn signed_bin(k: usize, n: usize) -> f64 {
    if k < n.div_ceil(2) {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Maps an array whose origin sits at `(cy, cx)` into FFT layout of the given
/// size (origin at index 0, wrapped), zero-filling elsewhere.
pub fn embed_wrapped(
    kernel: &Array2<f64>,
    origin: (usize, usize),
    rows: usize,
    cols: usize,
) -> Array2<Complex64> {
    let mut out = Array2::<Complex64>::zeros((rows, cols));
    for ((i, j), &v) in kernel.indexed_iter() {
        if v == 0.0 {
            continue;
        }
        let di = i as isize - origin.0 as isize;
        let dj = j as isize - origin.1 as isize;
        let r = di.rem_euclid(rows as isize) as usize;
        let c = dj.rem_euclid(cols as isize) as usize;
        out[[r, c]] += Complex64::new(v, 0.0);
    }
    out
}

pub(crate) fn to_complex(a: &Array2<f64>) -> Array2<Complex64> {
    a.mapv(|v| Complex64::new(v, 0.0))
}

pub(crate) fn real_part(a: &Array2<Complex64>) -> Array2<f64> {
    a.mapv(|v| v.re)
}
