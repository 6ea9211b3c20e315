//! Forward degradation model and paired-dataset synthesis.
//!
//! Per channel: `clip(T * g * ((Y . I) * PSF) + eps)`, evaluated in linear light.

use std::path::{Path, PathBuf};

use ndarray::{s, Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fft::{embed_wrapped, fft2, ifft2};
use crate::fsutil::{read_json, write_json, StagedDir};
use crate::imaging::{encode_png, read_png, BitDepth, ImageTensor};
use crate::lens::LensDesign;
use crate::priors::{vignetting_map, EtaModel, SpatialPrior};
use crate::propagate::{EfficiencyVector, PsfStack};
use crate::units::{as_mm, as_um, vec_as_nm};

pub const CONFIG_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FORMAT_VERSION: u32 = 1;

/// True when `psf` is a single unit sample at its origin `(h/2, w/2)`.
fn is_centered_delta(psf: &Array2<f64>) -> bool {
    let (h, w) = psf.dim();
    psf.indexed_iter().all(|((y, x), &v)| if (y, x) == (h / 2, w / 2) { v == 1.0 } else { v == 0.0 })
}

/// Zero-padded linear convolution; the kernel origin is sample `(h/2, w/2)`.
pub(crate) fn convolve_raw(channel: &Array2<f64>, kernel: &Array2<f64>) -> Array2<f64> {
    let (h, w) = channel.dim();
    let (kh, kw) = kernel.dim();
    let (ph, pw) = (h + kh - 1, w + kw - 1);
    let mut a = Array2::<num_complex::Complex64>::zeros((ph, pw));
    for ((y, x), &v) in channel.indexed_iter() {
        a[[y, x]].re = v;
    }
    let mut k = embed_wrapped(kernel, (kh / 2, kw / 2), ph, pw);
    fft2(&mut a);
    fft2(&mut k);
    a *= &k;
    ifft2(&mut a);
    a.slice(s![0..h, 0..w]).mapv(|v| v.re)
}

/// Linear FFT convolution cropped to the input size. Kernels that do not sum
/// to one are normalized first.
pub fn convolve_fft(channel: &Array2<f64>, psf: &Array2<f64>) -> Result<Array2<f64>> {
    if psf.is_empty() || channel.is_empty() {
        return Err(Error::InvalidArgument("convolution operands must be non-empty".into()));
    }
    let sum = psf.sum();
    if !(sum > 0.0 && sum.is_finite()) {
        return Err(Error::InvalidArgument("psf must have positive finite mass".into()));
    }
    if is_centered_delta(psf) {
        return Ok(channel.clone());
    }
    if (sum - 1.0).abs() > 1e-9 {
        log::warn!("psf sums to {sum}; normalizing");
        return Ok(convolve_raw(channel, &psf.mapv(|v| v / sum)));
    }
    Ok(convolve_raw(channel, psf))
}

/// Binary disc of radius `r` pixels, centred in a `(2r+1)^2` raster.
pub fn disk_kernel(radius: usize) -> Array2<f64> {
    let n = 2 * radius + 1;
    let r2 = (radius * radius) as f64;
    Array2::from_shape_fn((n, n), |(y, x)| {
        let (dy, dx) = (y as f64 - radius as f64, x as f64 - radius as f64);
        if dx * dx + dy * dy <= r2 { 1.0 } else { 0.0 }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub sigma: f64,
    /// Pixels.
    pub correlation_radius: usize,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { sigma: 0.01, correlation_radius: 2 }
    }
}

/// White Gaussian noise of std `sigma` filtered by a disc and rescaled so the
/// output std is again `sigma`. Generated on a padded field and cropped, so
/// statistics are stationary up to the border.
pub fn correlated_noise(height: usize, width: usize, noise: &NoiseConfig, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let r = noise.correlation_radius;
    let (ph, pw) = (height + 2 * r, width + 2 * r);
    let white = Array2::from_shape_simple_fn((ph, pw), || {
        let z: f64 = StandardNormal.sample(rng);
        z
    });
    if r == 0 {
        return white.mapv(|v| v * noise.sigma);
    }
    let k = disk_kernel(r);
    let norm = k.iter().map(|v| v * v).sum::<f64>().sqrt();
    let filtered = convolve_raw(&white, &k);
    filtered.slice(s![r..r + height, r..r + width]).mapv(|v| v * noise.sigma / norm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialConfig {
    #[serde(with = "as_mm")]
    pub focal_length: f64,
    #[serde(with = "as_um")]
    pub pixel_pitch: f64,
    /// One shared model or one per channel.
    pub eta: Vec<EtaModel>,
}

impl SpatialConfig {
    pub fn maps(&self, width: usize, height: usize, channels: usize) -> Result<Vec<SpatialPrior>> {
        if self.eta.len() != 1 && self.eta.len() != channels {
            return Err(Error::Configuration(format!(
                "spatial prior has {} eta models for {} channels",
                self.eta.len(),
                channels
            )));
        }
        (0..channels)
            .map(|c| vignetting_map(width, height, self.focal_length, self.pixel_pitch, &self.eta[c.min(self.eta.len() - 1)]))
            .collect()
    }
}

fn default_channel_wavelengths() -> Vec<f64> {
    vec![0.650, 0.532, 0.450]
}

fn default_gains() -> [f64; 3] {
    [1.67, 1.0, 2.34]
}

fn config_version() -> u32 {
    CONFIG_FORMAT_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradeConfig {
    #[serde(default = "config_version")]
    pub format_version: u32,
    /// PSF stack file, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psf_path: Option<String>,
    #[serde(skip)]
    pub psf: Option<PsfStack>,
    pub efficiency: EfficiencyVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spatial: Option<SpatialConfig>,
    #[serde(default = "default_gains")]
    pub wb_gains: [f64; 3],
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(with = "vec_as_nm", default = "default_channel_wavelengths")]
    pub channel_wavelengths: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl DegradeConfig {
    /// Config that leaves linear images unchanged, for the given PSF stack.
    pub fn identity(psf: PsfStack) -> Self {
        Self {
            format_version: CONFIG_FORMAT_VERSION,
            psf_path: None,
            efficiency: EfficiencyVector::uniform(psf.wavelengths.clone()),
            channel_wavelengths: default_channel_wavelengths(),
            psf: Some(psf),
            spatial: None,
            wb_gains: [1.0; 3],
            noise: NoiseConfig { sigma: 0.0, correlation_radius: 0 },
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != CONFIG_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported degrade config format_version {}", self.format_version)));
        }
        if self.wb_gains.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            return Err(Error::InvalidArgument("white-balance gains must be positive".into()));
        }
        if !(self.noise.sigma >= 0.0 && self.noise.sigma.is_finite()) {
            return Err(Error::InvalidArgument("noise sigma must be non-negative".into()));
        }
        self.efficiency.validate()?;
        if self.channel_wavelengths.is_empty() {
            return Err(Error::Configuration("no channel wavelengths configured".into()));
        }
        Ok(())
    }

    /// Loads the config and the PSF stack it references.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = read_json(path)?;
        cfg.validate()?;
        if let Some(p) = &cfg.psf_path {
            let full = path.parent().unwrap_or(Path::new(".")).join(p);
            cfg.psf = Some(PsfStack::read(&full)?);
        }
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// SHA-256 of the serialized config, hex.
    pub fn config_hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(self)?)))
    }

    pub fn psf_stack(&self) -> Result<&PsfStack> {
        self.psf.as_ref().ok_or_else(|| Error::Configuration("degrade config has no PSF stack".into()))
    }

    /// PSF, efficiency and gain for image channel `c` of `channels`.
    pub fn channel_terms(&self, c: usize, channels: usize) -> Result<(&Array2<f64>, f64, f64)> {
        if self.channel_wavelengths.len() < channels {
            return Err(Error::Configuration(format!(
                "{} channel wavelengths configured for a {channels}-channel image",
                self.channel_wavelengths.len()
            )));
        }
        let lam = self.channel_wavelengths[c];
        let nm = lam * 1e3;
        let psf = self
            .psf_stack()?
            .get(lam)
            .ok_or_else(|| Error::Configuration(format!("PSF stack has no entry for {nm} nm")))?;
        let t = self
            .efficiency
            .at(lam)
            .ok_or_else(|| Error::Configuration(format!("efficiency vector has no entry for {nm} nm")))?;
        let g = if channels == 1 { 1.0 } else { self.wb_gains[c] };
        Ok((psf, t, g))
    }

    pub fn spatial_maps(&self, width: usize, height: usize, channels: usize) -> Result<Vec<SpatialPrior>> {
        match &self.spatial {
            Some(s) => s.maps(width, height, channels),
            None => Ok((0..channels).map(|_| SpatialPrior::uniform(width, height)).collect()),
        }
    }
}

/// Degradation before the final clamp; values may leave `[0, 1]`.
pub fn degrade_preclamp(clean: &ImageTensor, cfg: &DegradeConfig, seed: u64) -> Result<Array3<f64>> {
    cfg.validate()?;
    let lin = clean.to_linear();
    let (c, h, w) = lin.data.dim();
    let maps = cfg.spatial_maps(w, h, c)?;
    let planes: Vec<Array2<f64>> = (0..c)
        .into_par_iter()
        .map(|ch| -> Result<Array2<f64>> {
            let (psf, t, g) = cfg.channel_terms(ch, c)?;
            let mut x = lin.plane_f64(ch);
            if cfg.spatial.is_some() {
                x *= &maps[ch].map;
            }
            let mut y = convolve_fft(&x, psf)?;
            let scale = t * g;
            if scale != 1.0 {
                y.mapv_inplace(|v| v * scale);
            }
            if cfg.noise.sigma > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(ch as u64);
                y += &correlated_noise(h, w, &cfg.noise, &mut rng);
            }
            Ok(y)
        })
        .collect::<Result<_>>()?;
    Ok(Array3::from_shape_fn((c, h, w), |(ch, y, x)| planes[ch][[y, x]]))
}

pub fn degrade_image(clean: &ImageTensor, cfg: &DegradeConfig) -> Result<ImageTensor> {
    degrade_with_seed(clean, cfg, cfg.seed)
}

pub fn degrade_with_seed(clean: &ImageTensor, cfg: &DegradeConfig, seed: u64) -> Result<ImageTensor> {
    let pre = degrade_preclamp(clean, cfg, seed)?;
    ImageTensor::linear(pre.mapv(|v| v.clamp(0.0, 1.0) as f32))
}

/// `seed` xor the leading eight bytes of SHA-256 of the file name.
pub fn derive_seed(seed: u64, file_name: &str) -> u64 {
    let d = Sha256::digest(file_name.as_bytes());
    seed ^ u64::from_le_bytes(d[..8].try_into().expect("digest length"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputEntry {
    pub image: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct InputManifest {
    images: Vec<InputEntry>,
}

/// Inputs from a directory of PNGs (sorted by name) or an input manifest
/// `{"images": [{"image": ..., "mask": ...}]}` with paths relative to it.
pub fn collect_inputs(path: &Path) -> Result<Vec<InputEntry>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        files.sort();
        return Ok(files.into_iter().map(|image| InputEntry { image, mask: None }).collect());
    }
    let m: InputManifest = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(m.images
        .into_iter()
        .map(|e| InputEntry { image: base.join(&e.image), mask: e.mask.map(|p| base.join(p)) })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub degraded_path: Option<String>,
    pub clean_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<String>,
    pub seed: u64,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub lens: LensDesign,
    pub config_hash: String,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = read_json(path)?;
        if m.format_version != MANIFEST_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported manifest format_version {}", m.format_version)));
        }
        Ok(m)
    }

    /// Checks that every successful entry's files exist under `root`.
    pub fn validate(&self, root: &Path) -> Result<()> {
        for e in self.entries.iter().filter(|e| e.error.is_none()) {
            for p in [&e.degraded_path, &e.clean_path, &e.mask_path].into_iter().flatten() {
                if !root.join(p).is_file() {
                    return Err(Error::Format(format!("manifest entry `{}` references missing {p}", e.name)));
                }
            }
        }
        Ok(())
    }

    pub fn ok_entries(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.error.is_none())
    }
}

struct Produced {
    entry: ManifestEntry,
    files: Vec<(String, Vec<u8>)>,
}

fn produce(input: &InputEntry, cfg: &DegradeConfig, hash: &str, depth: BitDepth) -> Result<Produced> {
    let name = input
        .image
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::InvalidArgument(format!("bad image path {}", input.image.display())))?
        .to_string();
    let file_name = format!("{name}.png");
    let seed = derive_seed(cfg.seed, &file_name);
    let bytes = std::fs::read(&input.image).map_err(|e| Error::io(&input.image, e))?;
    let clean = read_png(&input.image, true)?.to_rgb();
    let degraded = degrade_with_seed(&clean, cfg, seed)?;
    let deg_rel = format!("degraded/{file_name}");
    let clean_rel = format!("clean/{file_name}");
    let mut files = vec![(deg_rel.clone(), encode_png(&degraded, depth)?), (clean_rel.clone(), bytes)];
    let mask_rel = match &input.mask {
        Some(m) => {
            let rel = format!("masks/{file_name}");
            files.push((rel.clone(), std::fs::read(m).map_err(|e| Error::io(m, e))?));
            Some(rel)
        }
        None => None,
    };
    Ok(Produced {
        entry: ManifestEntry {
            name,
            degraded_path: Some(deg_rel),
            clean_path: Some(clean_rel),
            mask_path: mask_rel,
            seed,
            config_hash: hash.to_string(),
            error: None,
        },
        files,
    })
}

/// Degrades every input into `out_dir/{degraded,clean,masks}` and writes
/// `out_dir/manifest.json`. The directory appears only once complete.
pub fn synthesize_dataset(
    inputs: &[InputEntry],
    lens: &LensDesign,
    cfg: &DegradeConfig,
    out_dir: &Path,
    depth: BitDepth,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    cfg.psf_stack()?;
    let hash = cfg.config_hash()?;
    let mut names: Vec<_> = inputs.iter().filter_map(|i| i.image.file_name()).collect();
    names.sort();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Configuration("input images must have distinct file names".into()));
    }
    let results: Vec<(Option<Produced>, ManifestEntry)> = inputs
        .par_iter()
        .map(|input| match produce(input, cfg, &hash, depth) {
            Ok(p) => {
                let e = p.entry.clone();
                (Some(p), e)
            }
            Err(err) => {
                let name = input.image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                log::warn!("skipping {}: {err}", input.image.display());
                let entry = ManifestEntry {
                    seed: derive_seed(cfg.seed, &format!("{name}.png")),
                    name,
                    degraded_path: None,
                    clean_path: None,
                    mask_path: None,
                    config_hash: hash.clone(),
                    error: Some(err.to_string()),
                };
                (None, entry)
            }
        })
        .collect();
    if results.iter().all(|(p, _)| p.is_none()) {
        return Err(Error::Configuration("no input image could be degraded".into()));
    }
    let staged = StagedDir::new(out_dir)?;
    for (p, _) in &results {
        if let Some(p) = p {
            for (rel, bytes) in &p.files {
                let path = staged.path().join(rel);
                if let Some(parent) = path.parent() {
                    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                }
                std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            }
        }
    }
    let manifest = DatasetManifest {
        format_version: MANIFEST_FORMAT_VERSION,
        lens: lens.clone(),
        config_hash: hash,
        entries: results.into_iter().map(|(_, e)| e).collect(),
    };
    write_json(&staged.path().join("manifest.json"), &manifest)?;
    staged.commit()?;
    Ok(manifest)
}
