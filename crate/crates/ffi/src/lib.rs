//! C ABI over the metascope toolkit.
//!
//! Objects cross the boundary as opaque handles created by `ms_*_new`,
//! `ms_*_load` or a computation, and released with the matching `ms_*_free`.
//! Every fallible call returns an [`MsStatus`]; on failure the message is
//! kept per thread and read back with [`ms_last_error_message`].
//! Lengths are micrometres throughout.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use metascope::correct::{correct_pipeline, fit_channel_mixtures, ChannelMixtures, CorrectOptions};
use metascope::degrade::{degrade_with_seed, DegradeConfig};
use metascope::imaging::ImageTensor;
use metascope::lens::LensDesign;
use metascope::metrics::{psnr, ssim};
use ndarray::Array3;
use metascope::propagate::{default_lens_grid, focal_sweep, simulate_stack, PsfOptions, PsfStack, PsfWindow};
use metascope::psfmodel::EmConfig;
use metascope::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Format = 4,
    Configuration = 5,
    /// Sampling, aliasing, band or model-range violations.
    Numerical = 6,
    Io = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

pub struct MsLens(LensDesign);
pub struct MsPsfStack(PsfStack);
pub struct MsImage(ImageTensor);
pub struct MsDegradeConfig(DegradeConfig);
pub struct MsMixtures(ChannelMixtures);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MsStatus {
    match e {
        Error::InvalidArgument(_) | Error::LabelOutOfRange { .. } => MsStatus::InvalidArgument,
        Error::Dimension { .. } => MsStatus::Dimension,
        Error::Format(_) | Error::Json(_) => MsStatus::Format,
        Error::Configuration(_) | Error::InsufficientSlots { .. } => MsStatus::Configuration,
        Error::UnderSampled { .. } | Error::Aliasing { .. } | Error::OutOfBand { .. } | Error::OutOfModel { .. } | Error::Detection(_) => {
            MsStatus::Numerical
        }
        Error::Io { .. } | Error::Image(_) => MsStatus::Io,
    }
}

enum Fail {
    Status(MsStatus, String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn null(what: &str) -> Fail {
    Fail::Status(MsStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MsStatus::Ok,
        Ok(Err(Fail::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            MsStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Status(MsStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn release<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ms_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL, or
/// 0 when no error has been recorded.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ms_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match &*e.borrow() {
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
        None => 0,
    })
}

/// Ideal-phase lens with diffractive focal scaling.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn ms_lens_new(diameter_um: f64, focal_length_um: f64, wavelength_um: f64, out: *mut *mut MsLens) -> MsStatus {
    guard(|| emit(out, MsLens(LensDesign::new(diameter_um, focal_length_um, wavelength_um)?)))
}

/// Reads a lens design JSON.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn ms_lens_load(path: *const c_char, out: *mut *mut MsLens) -> MsStatus {
    guard(|| {
        let p = path_arg(path, "path")?;
        let lens: LensDesign = metascope::fsutil::read_json(&p)?;
        lens.validate()?;
        emit(out, MsLens(lens))
    })
}

/// # Safety
/// `lens` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn ms_lens_free(lens: *mut MsLens) {
    release(lens)
}

/// Best-focus distance for `wavelength_um` over `[z_min_um, z_max_um]` on a
/// square lens grid of `grid_samples`.
///
/// # Safety
/// `lens` must be a live handle and `z_best_um` writable.
#[no_mangle]
pub unsafe extern "C" fn ms_focal_sweep(
    lens: *const MsLens,
    wavelength_um: f64,
    z_min_um: f64,
    z_max_um: f64,
    steps: usize,
    grid_samples: usize,
    z_best_um: *mut f64,
) -> MsStatus {
    guard(|| {
        let lens = &borrow(lens, "lens")?.0;
        if z_best_um.is_null() {
            return Err(null("z_best_um"));
        }
        let grid = default_lens_grid(lens, grid_samples)?;
        *z_best_um = focal_sweep(lens, wavelength_um, z_min_um, z_max_um, steps, grid, 1.0)?.z_best;
        Ok(())
    })
}

/// Unit-sum PSFs for `count` wavelengths on a `window` x `window` raster of
/// sample pitch `pitch_um`.
///
/// # Safety
/// `wavelengths_um` must point to `count` values; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn ms_psf_simulate(
    lens: *const MsLens,
    wavelengths_um: *const f64,
    count: usize,
    sensor_distance_um: f64,
    grid_samples: usize,
    window: usize,
    pitch_um: f64,
    out: *mut *mut MsPsfStack,
) -> MsStatus {
    guard(|| {
        let lens = &borrow(lens, "lens")?.0;
        if wavelengths_um.is_null() || count == 0 {
            return Err(Fail::Status(MsStatus::InvalidArgument, "at least one wavelength is required".into()));
        }
        let wl = std::slice::from_raw_parts(wavelengths_um, count).to_vec();
        let opts = PsfOptions { window: PsfWindow { samples: window, pitch: pitch_um, oversample: 1 }, ..Default::default() };
        opts.window.validate()?;
        let grid = default_lens_grid(lens, grid_samples)?;
        emit(out, MsPsfStack(simulate_stack(lens, &wl, sensor_distance_um, grid, &opts)?))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn ms_psf_stack_read(path: *const c_char, out: *mut *mut MsPsfStack) -> MsStatus {
    guard(|| emit(out, MsPsfStack(PsfStack::read(&path_arg(path, "path")?)?)))
}

/// # Safety
/// `stack` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ms_psf_stack_write(stack: *const MsPsfStack, path: *const c_char) -> MsStatus {
    guard(|| {
        borrow(stack, "stack")?.0.write(&path_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `stack` must be a live handle; the output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_psf_stack_dims(stack: *const MsPsfStack, count: *mut usize, rows: *mut usize, cols: *mut usize) -> MsStatus {
    guard(|| {
        let s = &borrow(stack, "stack")?.0;
        if count.is_null() || rows.is_null() || cols.is_null() {
            return Err(null("dimension output"));
        }
        let (h, w) = s.shape();
        *count = s.psfs.len();
        *rows = h;
        *cols = w;
        Ok(())
    })
}

/// Copies raster `index` row-major into `buf` of `len` doubles.
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ms_psf_stack_copy(stack: *const MsPsfStack, index: usize, buf: *mut f64, len: usize) -> MsStatus {
    guard(|| {
        let s = &borrow(stack, "stack")?.0;
        let psf = s
            .psfs
            .get(index)
            .ok_or_else(|| Fail::Status(MsStatus::InvalidArgument, format!("index {index} out of {} rasters", s.psfs.len())))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len < psf.len() {
            return Err(Fail::Status(MsStatus::BufferTooSmall, format!("need {} doubles, got {len}", psf.len())));
        }
        let dst = std::slice::from_raw_parts_mut(buf, psf.len());
        for (d, v) in dst.iter_mut().zip(psf.iter()) {
            *d = *v;
        }
        Ok(())
    })
}

/// # Safety
/// `stack` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn ms_psf_stack_free(stack: *mut MsPsfStack) {
    release(stack)
}

/// Linear-light image from planar `[channel][row][col]` floats.
///
/// # Safety
/// `data` must point to `channels * height * width` floats.
#[no_mangle]
pub unsafe extern "C" fn ms_image_new(channels: usize, height: usize, width: usize, data: *const f32, out: *mut *mut MsImage) -> MsStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let n = channels
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| Fail::Status(MsStatus::InvalidArgument, "image size overflows".into()))?;
        let v = std::slice::from_raw_parts(data, n).to_vec();
        let arr = Array3::from_shape_vec((channels, height, width), v)
            .map_err(|e| Fail::Status(MsStatus::Dimension, e.to_string()))?;
        emit(out, MsImage(ImageTensor::linear(arr)?))
    })
}

/// # Safety
/// `image` must be a live handle; the output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_image_dims(image: *const MsImage, channels: *mut usize, height: *mut usize, width: *mut usize) -> MsStatus {
    guard(|| {
        let img = &borrow(image, "image")?.0;
        if channels.is_null() || height.is_null() || width.is_null() {
            return Err(null("dimension output"));
        }
        *channels = img.channels();
        *height = img.height();
        *width = img.width();
        Ok(())
    })
}

/// Copies the image planar into `buf` of `len` floats.
///
/// # Safety
/// `buf` must point to `len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn ms_image_copy(image: *const MsImage, buf: *mut f32, len: usize) -> MsStatus {
    guard(|| {
        let img = &borrow(image, "image")?.0;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let n = img.data.len();
        if len < n {
            return Err(Fail::Status(MsStatus::BufferTooSmall, format!("need {n} floats, got {len}")));
        }
        let dst = std::slice::from_raw_parts_mut(buf, n);
        for (d, v) in dst.iter_mut().zip(img.data.iter()) {
            *d = *v;
        }
        Ok(())
    })
}

/// # Safety
/// `image` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn ms_image_free(image: *mut MsImage) {
    release(image)
}

/// Reads a degradation config and the PSF stack it references.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn ms_config_load(path: *const c_char, out: *mut *mut MsDegradeConfig) -> MsStatus {
    guard(|| emit(out, MsDegradeConfig(DegradeConfig::load(&path_arg(path, "path")?)?)))
}

/// Noise-free, unit-gain config around a PSF stack (copied).
///
/// # Safety
/// `stack` must be a live handle; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn ms_config_identity(stack: *const MsPsfStack, out: *mut *mut MsDegradeConfig) -> MsStatus {
    guard(|| emit(out, MsDegradeConfig(DegradeConfig::identity(borrow(stack, "stack")?.0.clone()))))
}

/// Replaces the config's PSF stack with a copy of `stack`.
///
/// # Safety
/// Both handles must be live.
#[no_mangle]
pub unsafe extern "C" fn ms_config_set_psf(config: *mut MsDegradeConfig, stack: *const MsPsfStack) -> MsStatus {
    guard(|| {
        let s = borrow(stack, "stack")?.0.clone();
        config.as_mut().ok_or_else(|| null("config"))?.0.psf = Some(s);
        Ok(())
    })
}

/// # Safety
/// `config` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn ms_config_free(config: *mut MsDegradeConfig) {
    release(config)
}

/// # Safety
/// Handles must be live; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn ms_degrade(config: *const MsDegradeConfig, clean: *const MsImage, seed: u64, out: *mut *mut MsImage) -> MsStatus {
    guard(|| {
        let cfg = &borrow(config, "config")?.0;
        let img = &borrow(clean, "clean")?.0;
        emit(out, MsImage(degrade_with_seed(img, cfg, seed)?))
    })
}

/// EM fit of `k` components to every raster of the stack.
///
/// # Safety
/// `stack` must be a live handle; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn ms_mixtures_fit(stack: *const MsPsfStack, k: usize, seed: u64, out: *mut *mut MsMixtures) -> MsStatus {
    guard(|| {
        let s = &borrow(stack, "stack")?.0;
        let cfg = EmConfig { k, seed, ..Default::default() };
        emit(out, MsMixtures(fit_channel_mixtures(s, &s.wavelengths, &cfg)?))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn ms_mixtures_load(path: *const c_char, out: *mut *mut MsMixtures) -> MsStatus {
    guard(|| emit(out, MsMixtures(ChannelMixtures::load(&path_arg(path, "path")?)?)))
}

/// # Safety
/// `mixtures` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn ms_mixtures_free(mixtures: *mut MsMixtures) {
    release(mixtures)
}

/// Correction pipeline; mixtures are matched to the config's channel
/// wavelengths. `occ` non-zero enables chromatic aggregation.
///
/// # Safety
/// Handles must be live; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn ms_correct(
    config: *const MsDegradeConfig,
    mixtures: *const MsMixtures,
    degraded: *const MsImage,
    snr: f64,
    occ: i32,
    out: *mut *mut MsImage,
) -> MsStatus {
    guard(|| {
        let cfg = &borrow(config, "config")?.0;
        let mix = &borrow(mixtures, "mixtures")?.0;
        let img = &borrow(degraded, "degraded")?.0;
        let n = img.channels().min(cfg.channel_wavelengths.len());
        let chosen = mix.for_channels(&cfg.channel_wavelengths[..n])?;
        let opts = CorrectOptions { snr, occ: occ != 0, ..Default::default() };
        emit(out, MsImage(correct_pipeline(img, cfg, &chosen, &opts, None)?.0))
    })
}

/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ms_psnr(a: *const MsImage, b: *const MsImage, out: *mut f64) -> MsStatus {
    guard(|| {
        let v = psnr(&borrow(a, "a")?.0, &borrow(b, "b")?.0)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// Gaussian-window SSIM with an odd `window`.
///
/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ms_ssim(a: *const MsImage, b: *const MsImage, window: usize, out: *mut f64) -> MsStatus {
    guard(|| {
        let v = ssim(&borrow(a, "a")?.0, &borrow(b, "b")?.0, window)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}
