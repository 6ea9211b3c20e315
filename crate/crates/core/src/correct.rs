//! Optics-informed correction: analytic prior inverse, Wiener deconvolution,
//! and reference forward passes of the intensity-adjustment (OIA) and
//! chromatic-correction (OCC) modules with externally supplied weights.

use std::path::Path;

use ndarray::{s, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::degrade::{convolve_fft, DegradeConfig};
use crate::error::{Error, Result};
use crate::fft::{embed_wrapped, fft2, ifft2, real_part, to_complex};
use crate::imaging::ImageTensor;
use crate::metrics::{db_serde, psnr};
use crate::propagate::{centroid_of, EfficiencyVector, PsfStack};
use crate::psfmodel::{fit_gmm_em, offsets_from_mixture, EmConfig, EmData, GaussianMixture2D, OffsetField, OffsetSet, VARIANCE_FLOOR};
use crate::raster::{self, DType, RasterHeader};

pub const WEIGHTS_FORMAT_VERSION: u32 = 1;
pub const MIXTURES_FORMAT_VERSION: u32 = 1;
/// Seed of the default random bundle used by the oracle tests.
pub const DEFAULT_WEIGHT_SEED: u64 = 20_250_101;
const MASS_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    /// `[channel, row, col]`
    pub data: Array3<f32>,
}

impl FeatureMap {
    pub fn new(data: Array3<f32>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("feature map must be non-empty".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("feature map has non-finite entries".into()));
        }
        Ok(Self { data })
    }

    pub fn from_f64(data: &Array3<f64>) -> Result<Self> {
        Self::new(data.mapv(|v| v as f32))
    }

    pub fn to_f64(&self) -> Array3<f64> {
        self.data.mapv(f64::from)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.data.dim()
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Fully connected layer, row-major `[out][in]` weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self { out_dim, in_dim, weight: vec![0.0; out_dim * in_dim], bias: vec![0.0; out_dim] }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.out_dim)
            .map(|o| self.bias[o] + self.weight[o * self.in_dim..(o + 1) * self.in_dim].iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }
}

/// Same-size 2-D cross-correlation with zero padding; the kernel origin is
/// `(kh/2, kw/2)`. Weights are `[out][in][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub out_ch: usize,
    pub in_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(out_ch: usize, in_ch: usize, k: usize) -> Self {
        Self { out_ch, in_ch, kh: k, kw: k, weight: vec![0.0; out_ch * in_ch * k * k], bias: vec![0.0; out_ch] }
    }

    /// Centre tap 1 on the channel diagonal.
    pub fn identity(ch: usize, k: usize) -> Self {
        let mut c = Self::zeros(ch, ch, k);
        for i in 0..ch {
            let at = c.index(i, i, k / 2, k / 2);
            c.weight[at] = 1.0;
        }
        c
    }

    fn index(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_ch + i) * self.kh + ky) * self.kw + kx
    }

    pub fn apply(&self, x: &Array3<f64>) -> Array3<f64> {
        let (_, h, w) = x.dim();
        let (oy, ox) = (self.kh / 2, self.kw / 2);
        let mut out = Array3::<f64>::zeros((self.out_ch, h, w));
        out.outer_iter_mut().into_par_iter().enumerate().for_each(|(o, mut plane)| {
            plane.fill(self.bias[o]);
            for i in 0..self.in_ch {
                let src = x.index_axis(Axis(0), i);
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        let wv = self.weight[self.index(o, i, ky, kx)];
                        if wv == 0.0 {
                            continue;
                        }
                        let dy = ky as isize - oy as isize;
                        let dx = kx as isize - ox as isize;
                        let (y0, y1) = ((-dy).max(0) as usize, (h as isize - dy).min(h as isize).max(0) as usize);
                        let (x0, x1) = ((-dx).max(0) as usize, (w as isize - dx).min(w as isize).max(0) as usize);
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            for xx in x0..x1 {
                                plane[[y, xx]] += wv * src[[sy, (xx as isize + dx) as usize]];
                            }
                        }
                    }
                }
            }
        });
        out
    }
}

/// Feature dimensions a bundle is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleDims {
    /// Feature channels.
    pub channels: usize,
    /// Length of the efficiency vector.
    pub prior_len: usize,
    /// Planes of the spatial stack, `[Y, C_x, C_y]` by default.
    pub spatial_inputs: usize,
    /// Odd square kernel size of every convolution.
    pub kernel: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightBundle {
    pub dims: BundleDims,
    pub seed: Option<u64>,
    pub provenance: String,
    pub enc_fc: Dense,
    pub enc_conv: Conv2d,
    pub proj_fc: Dense,
    pub proj_conv: Conv2d,
    pub oia_conv1: Conv2d,
    pub oia_conv2: Conv2d,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct BundleHeader {
    format_version: u32,
    dims: BundleDims,
    seed: Option<u64>,
    provenance: String,
    tensors: Vec<TensorEntry>,
}

impl WeightBundle {
    pub fn zeros(dims: BundleDims) -> Self {
        let BundleDims { channels: c, prior_len: l, spatial_inputs: s, kernel: k } = dims;
        Self {
            dims,
            seed: None,
            provenance: "zeros".into(),
            enc_fc: Dense::zeros(c, l),
            enc_conv: Conv2d::zeros(1, s, k),
            proj_fc: Dense::zeros(c, c),
            proj_conv: Conv2d::zeros(1, 1, k),
            oia_conv1: Conv2d::zeros(c, c, k),
            oia_conv2: Conv2d::zeros(c, c, k),
        }
    }

    /// Uniform weights in `+-1/sqrt(fan_in)`, biases in `+-0.1`.
    pub fn random(dims: BundleDims, seed: u64) -> Self {
        let mut b = Self::zeros(dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (w, bias, fan_in) in b.tensors_mut() {
            let s = 1.0 / (fan_in as f64).sqrt();
            w.iter_mut().for_each(|v| *v = rng.random_range(-s..s));
            bias.iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
        }
        b.seed = Some(seed);
        b.provenance = format!("random(seed={seed})");
        b
    }

    pub fn default_for(dims: BundleDims) -> Self {
        Self::random(dims, DEFAULT_WEIGHT_SEED)
    }

    /// `(weight, bias, fan_in)` in file order.
    fn tensors_mut(&mut self) -> Vec<(&mut Vec<f64>, &mut Vec<f64>, usize)> {
        let Self { enc_fc, enc_conv, proj_fc, proj_conv, oia_conv1, oia_conv2, .. } = self;
        fn dense(d: &mut Dense) -> (&mut Vec<f64>, &mut Vec<f64>, usize) {
            let fan = d.in_dim;
            (&mut d.weight, &mut d.bias, fan)
        }
        fn conv(c: &mut Conv2d) -> (&mut Vec<f64>, &mut Vec<f64>, usize) {
            let fan = c.in_ch * c.kh * c.kw;
            (&mut c.weight, &mut c.bias, fan)
        }
        vec![dense(enc_fc), conv(enc_conv), dense(proj_fc), conv(proj_conv), conv(oia_conv1), conv(oia_conv2)]
    }

    fn layout(&self) -> Vec<(TensorEntry, Vec<f64>)> {
        let dense = |n: &str, d: &Dense| {
            vec![
                (TensorEntry { name: format!("{n}.weight"), shape: vec![d.out_dim, d.in_dim] }, d.weight.clone()),
                (TensorEntry { name: format!("{n}.bias"), shape: vec![d.out_dim] }, d.bias.clone()),
            ]
        };
        let conv = |n: &str, c: &Conv2d| {
            vec![
                (TensorEntry { name: format!("{n}.weight"), shape: vec![c.out_ch, c.in_ch, c.kh, c.kw] }, c.weight.clone()),
                (TensorEntry { name: format!("{n}.bias"), shape: vec![c.out_ch] }, c.bias.clone()),
            ]
        };
        let mut out = dense("enc_fc", &self.enc_fc);
        out.extend(conv("enc_conv", &self.enc_conv));
        out.extend(dense("proj_fc", &self.proj_fc));
        out.extend(conv("proj_conv", &self.proj_conv));
        out.extend(conv("oia_conv1", &self.oia_conv1));
        out.extend(conv("oia_conv2", &self.oia_conv2));
        out
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        if d.kernel % 2 == 0 || d.channels == 0 || d.prior_len == 0 || d.spatial_inputs == 0 {
            return Err(Error::InvalidArgument("bundle dims must be positive with an odd kernel".into()));
        }
        for ((want, _), (got, values)) in Self::zeros(d).layout().iter().zip(self.layout().iter()) {
            if want.shape != got.shape || values.len() != got.shape.iter().product::<usize>() {
                return Err(Error::dim(&want.name, format!("{:?}", want.shape), format!("{:?}", got.shape)));
            }
        }
        if self.layout().iter().any(|(_, v)| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::InvalidArgument("weight bundle has non-finite entries".into()));
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let layout = self.layout();
        let payload: Vec<f32> = layout.iter().flat_map(|(_, v)| v.iter().map(|&x| x as f32)).collect();
        let header = BundleHeader {
            format_version: WEIGHTS_FORMAT_VERSION,
            dims: self.dims,
            seed: self.seed,
            provenance: self.provenance.clone(),
            tensors: layout.into_iter().map(|(e, _)| e).collect(),
        };
        let h = RasterHeader::new("weight_bundle", DType::F32, vec![payload.len()], serde_json::to_value(header)?);
        raster::write_file(path, &h, &payload)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (h, data) = raster::read_kind(path, "weight_bundle")?;
        let header: BundleHeader = serde_json::from_value(h.meta)?;
        if header.format_version != WEIGHTS_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported weight bundle format_version {}", header.format_version)));
        }
        let mut b = Self::zeros(header.dims);
        let expected: Vec<(String, Vec<usize>)> = b.layout().into_iter().map(|(e, _)| (e.name, e.shape)).collect();
        let declared: Vec<(String, Vec<usize>)> = header.tensors.into_iter().map(|e| (e.name, e.shape)).collect();
        if expected != declared {
            return Err(Error::Format("weight bundle tensor table does not match its dims".into()));
        }
        let mut cursor = 0;
        for (w, bias, _) in b.tensors_mut() {
            for dst in [w, bias] {
                let n = dst.len();
                let src = data.get(cursor..cursor + n).ok_or_else(|| Error::Format("weight payload truncated".into()))?;
                dst.iter_mut().zip(src).for_each(|(d, s)| *d = f64::from(*s));
                cursor += n;
            }
        }
        if cursor != data.len() {
            return Err(Error::Format("weight payload has trailing values".into()));
        }
        b.seed = header.seed;
        b.provenance = header.provenance;
        b.validate()?;
        Ok(b)
    }
}

/// Channel and spatial attention maps of the intensity-adjustment module.
#[derive(Debug, Clone, PartialEq)]
pub struct OiaAttention {
    pub channel: Vec<f64>,
    pub spatial: Array2<f64>,
}

fn check_oia_shapes(x: &FeatureMap, t: &EfficiencyVector, y_stack: &Array3<f64>, w: &WeightBundle) -> Result<()> {
    let (c, h, wd) = x.shape();
    let d = w.dims;
    if c != d.channels {
        return Err(Error::dim("X channels", d.channels, c));
    }
    if t.efficiency.len() != d.prior_len {
        return Err(Error::dim("T", d.prior_len, t.efficiency.len()));
    }
    let (s, yh, yw) = y_stack.dim();
    if s != d.spatial_inputs {
        return Err(Error::dim("Y_stack planes", d.spatial_inputs, s));
    }
    if (yh, yw) != (h, wd) {
        return Err(Error::dim("Y_stack", format!("{h}x{wd}"), format!("{yh}x{yw}")));
    }
    w.validate()
}

/// `Attn_ch = sigmoid(Fc(Mean_sp(X) + E_ch))`, `Attn_sp = sigmoid(Conv(Mean_ch(X) + E_sp))`,
/// with `E_ch = Fc(T)` and `E_sp = Conv(Y_stack)`.
pub fn oia_attention(x: &FeatureMap, t: &EfficiencyVector, y_stack: &Array3<f64>, w: &WeightBundle) -> Result<OiaAttention> {
    check_oia_shapes(x, t, y_stack, w)?;
    let xf = x.to_f64();
    let e_ch = w.enc_fc.apply(&t.efficiency);
    let mean_sp: Vec<f64> = xf.outer_iter().map(|p| p.mean().unwrap_or(0.0)).collect();
    let pre: Vec<f64> = mean_sp.iter().zip(&e_ch).map(|(a, b)| a + b).collect();
    let channel = w.proj_fc.apply(&pre).into_iter().map(sigmoid).collect();
    let e_sp = w.enc_conv.apply(y_stack);
    let mean_ch = xf.mean_axis(Axis(0)).expect("non-empty");
    let pre_sp = (&mean_ch + &e_sp.index_axis(Axis(0), 0)).insert_axis(Axis(0));
    let spatial = w.proj_conv.apply(&pre_sp).index_axis(Axis(0), 0).mapv(sigmoid);
    Ok(OiaAttention { channel, spatial })
}

/// `Conv2(Attn_sp * Conv1(Attn_ch * X)) + X` for given attention maps.
pub fn oia_compose(x: &FeatureMap, attn: &OiaAttention, w: &WeightBundle) -> Result<FeatureMap> {
    let (c, h, wd) = x.shape();
    if attn.channel.len() != c {
        return Err(Error::dim("Attn_ch", c, attn.channel.len()));
    }
    if attn.spatial.dim() != (h, wd) {
        return Err(Error::dim("Attn_sp", format!("{h}x{wd}"), format!("{:?}", attn.spatial.dim())));
    }
    if w.oia_conv1.in_ch != c || w.oia_conv2.out_ch != c || w.oia_conv1.out_ch != w.oia_conv2.in_ch {
        return Err(Error::dim("oia_conv", c, w.oia_conv1.in_ch));
    }
    let xf = x.to_f64();
    let mut a = xf.clone();
    for (ch, mut p) in a.outer_iter_mut().enumerate() {
        p *= attn.channel[ch];
    }
    let mut b = w.oia_conv1.apply(&a);
    for mut p in b.outer_iter_mut() {
        p *= &attn.spatial;
    }
    let out = w.oia_conv2.apply(&b) + &xf;
    FeatureMap::from_f64(&out)
}

pub fn oia_forward(x: &FeatureMap, t: &EfficiencyVector, y_stack: &Array3<f64>, w: &WeightBundle) -> Result<FeatureMap> {
    let attn = oia_attention(x, t, y_stack, w)?;
    oia_compose(x, &attn, w)
}

/// Bilinear sample at `(sx, sy)`; taps outside the plane read zero.
fn bilinear(p: &Array2<f64>, sx: f64, sy: f64) -> f64 {
    let (h, w) = p.dim();
    let (x0, y0) = (sx.floor(), sy.floor());
    let (fx, fy) = (sx - x0, sy - y0);
    let (x0, y0) = (x0 as isize, y0 as isize);
    let at = |y: isize, x: isize| {
        if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
            p[[y as usize, x as usize]]
        } else {
            0.0
        }
    };
    let mut v = 0.0;
    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
            let k = wy * wx;
            if k != 0.0 {
                v += k * at(y0 + dy, x0 + dx);
            }
        }
    }
    v
}

/// `out(p) = sum_i w_i(p) X(p + dp_i(p))` on one plane; offsets are `[dx, dy]`.
pub fn occ_plane(x: &Array2<f64>, field: &OffsetField) -> Result<Array2<f64>> {
    field.validate()?;
    let (h, w) = x.dim();
    if (field.height, field.width) != (h, w) {
        return Err(Error::dim("offset field", format!("{h}x{w}"), format!("{}x{}", field.height, field.width)));
    }
    let taps = field.taps();
    let mut out = Array2::<f64>::zeros((h, w));
    out.axis_iter_mut(Axis(0)).into_par_iter().enumerate().for_each(|(y, mut row)| {
        for xx in 0..w {
            let base = (y * w + xx) * taps;
            let mut acc = 0.0;
            for i in base..base + taps {
                let wt = field.weights[i];
                if wt != 0.0 {
                    let [dx, dy] = field.offsets[i];
                    acc += wt * bilinear(x, xx as f64 + dx, y as f64 + dy);
                }
            }
            row[xx] = acc;
        }
    });
    Ok(out)
}

pub fn occ_aggregate(x: &FeatureMap, offsets: &OffsetField) -> Result<FeatureMap> {
    let xf = x.to_f64();
    let planes: Vec<Array2<f64>> = xf.outer_iter().map(|p| occ_plane(&p.to_owned(), offsets)).collect::<Result<_>>()?;
    let (c, h, w) = x.shape();
    FeatureMap::from_f64(&Array3::from_shape_fn((c, h, w), |(ch, y, xx)| planes[ch][[y, xx]]))
}

/// Per-channel multiplicative inverse of Y, T and the white-balance gain.
/// Blur is left in place.
pub fn prior_inverse_correct(degraded: &ImageTensor, cfg: &DegradeConfig, epsilon_floor: f64) -> Result<ImageTensor> {
    if !(epsilon_floor > 0.0) {
        return Err(Error::InvalidArgument("epsilon_floor must be positive".into()));
    }
    let lin = degraded.to_linear();
    let (c, h, w) = lin.data.dim();
    let maps = cfg.spatial_maps(w, h, c)?;
    let mut planes = Vec::with_capacity(c);
    for ch in 0..c {
        let (_, t, g) = cfg.channel_terms(ch, c)?;
        let tg = t * g;
        let y = &maps[ch].map;
        planes.push(Array2::from_shape_fn((h, w), |(r, x)| {
            (f64::from(lin.data[[ch, r, x]]) / y[[r, x]].max(epsilon_floor) / tg).clamp(0.0, 1.0)
        }));
    }
    ImageTensor::from_channels(&planes)
}

fn replicate_pad(x: &Array2<f64>, py: usize, px: usize) -> Array2<f64> {
    let (h, w) = x.dim();
    Array2::from_shape_fn((h + 2 * py, w + 2 * px), |(y, xx)| {
        let sy = (y as isize - py as isize).clamp(0, h as isize - 1) as usize;
        let sx = (xx as isize - px as isize).clamp(0, w as isize - 1) as usize;
        x[[sy, sx]]
    })
}

/// Symmetric extension with the edge sample repeated: `ba|abcd|dc`.
fn symmetric_pad(x: &Array2<f64>, py: usize, px: usize) -> Array2<f64> {
    let (h, w) = x.dim();
    let fold = |i: isize, n: usize| {
        let period = 2 * n as isize;
        let m = i.rem_euclid(period);
        (if m < n as isize { m } else { period - 1 - m }) as usize
    };
    Array2::from_shape_fn((h + 2 * py, w + 2 * px), |(y, xx)| x[[fold(y as isize - py as isize, h), fold(xx as isize - px as isize, w)]])
}

/// Wiener filter `H* / (|H|^2 + 1/snr)` with the kernel origin at
/// `(kh/2, kw/2)`. The channel is edge-replicated by the kernel size on
/// every side before the circular transform.
pub fn wiener_deconvolve(channel: &Array2<f64>, psf: &Array2<f64>, snr: f64) -> Result<Array2<f64>> {
    if !(snr > 0.0) {
        return Err(Error::InvalidArgument(format!("snr must be positive, got {snr}")));
    }
    let sum = psf.sum();
    if !(sum > 0.0 && sum.is_finite()) {
        return Err(Error::InvalidArgument("psf must have positive finite mass".into()));
    }
    let psf = if (sum - 1.0).abs() > 1e-9 {
        log::warn!("psf sums to {sum}; normalizing");
        psf.mapv(|v| v / sum)
    } else {
        psf.clone()
    };
    let (h, w) = channel.dim();
    let (kh, kw) = psf.dim();
    let padded = symmetric_pad(channel, kh, kw);
    let (ph, pw) = padded.dim();
    let mut g = to_complex(&padded);
    let mut k = embed_wrapped(&psf, (kh / 2, kw / 2), ph, pw);
    fft2(&mut g);
    fft2(&mut k);
    let nsr = 1.0 / snr;
    g.zip_mut_with(&k, |gv, hv| {
        let den = hv.norm_sqr() + nsr;
        *gv = if den > 0.0 { *gv * hv.conj() / den } else { num_complex::Complex64::new(0.0, 0.0) };
    });
    ifft2(&mut g);
    Ok(real_part(&g).slice(s![kh..kh + h, kw..kw + w]).to_owned())
}

/// Per-channel mixtures fitted to a PSF stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMixtures {
    pub format_version: u32,
    #[serde(with = "crate::units::vec_as_nm")]
    pub wavelengths: Vec<f64>,
    pub mixtures: Vec<GaussianMixture2D>,
}

impl ChannelMixtures {
    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = crate::fsutil::read_json(path)?;
        if m.format_version != MIXTURES_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported mixture file format_version {}", m.format_version)));
        }
        for g in &m.mixtures {
            g.validate()?;
        }
        if m.mixtures.len() != m.wavelengths.len() {
            return Err(Error::dim("mixtures", m.wavelengths.len(), m.mixtures.len()));
        }
        Ok(m)
    }

    /// One mixture per listed wavelength, in order.
    pub fn for_channels(&self, wavelengths: &[f64]) -> Result<Vec<GaussianMixture2D>> {
        wavelengths
            .iter()
            .map(|&l| {
                crate::propagate::wavelength_index(&self.wavelengths, l)
                    .map(|i| self.mixtures[i].clone())
                    .ok_or_else(|| Error::Configuration(format!("mixture file has no entry for {} nm", l * 1e3)))
            })
            .collect()
    }
}

/// EM fit of each listed wavelength's PSF raster (offsets in PSF samples).
/// A raster with fewer support points than `K` is fitted with fewer components.
pub fn fit_channel_mixtures(stack: &PsfStack, wavelengths: &[f64], cfg: &EmConfig) -> Result<ChannelMixtures> {
    let mixtures = wavelengths
        .iter()
        .map(|&l| {
            let psf = stack
                .get(l)
                .ok_or_else(|| Error::Configuration(format!("PSF stack has no entry for {} nm", l * 1e3)))?;
            let support = psf.iter().filter(|v| **v > 0.0).count();
            if support == 1 {
                let (h, w) = psf.dim();
                let ((y, x), _) = psf.indexed_iter().find(|(_, v)| **v > 0.0).expect("one support point");
                let mean = [x as f64 - (w / 2) as f64, y as f64 - (h / 2) as f64];
                return Ok(GaussianMixture2D::single(mean, [VARIANCE_FLOOR; 2]));
            }
            let k = cfg.k.min(support);
            Ok(fit_gmm_em(EmData::Raster(psf), &EmConfig { k, ..*cfg })?.mixture)
        })
        .collect::<Result<_>>()?;
    Ok(ChannelMixtures { format_version: MIXTURES_FORMAT_VERSION, wavelengths: wavelengths.to_vec(), mixtures })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectOptions {
    pub snr: f64,
    pub epsilon_floor: f64,
    /// Offset grid side; `M^2` taps per position.
    pub m: usize,
    pub occ: bool,
}

impl Default for CorrectOptions {
    fn default() -> Self {
        Self { snr: 30.0, epsilon_floor: 1e-3, m: 3, occ: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    /// Against the reference image, when one was given.
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_db")]
    pub psnr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_db")]
    pub delta: Option<f64>,
}

mod opt_db {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Db(#[serde(with = "super::db_serde")] f64);

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.map(Db).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(Option::<Db>::deserialize(d)?.map(|v| v.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CorrectionReport {
    pub stages: Vec<StageReport>,
}

impl CorrectionReport {
    fn record(&mut self, stage: &str, img: &ImageTensor, reference: Option<&ImageTensor>) -> Result<()> {
        let psnr = reference.map(|r| psnr(img, r)).transpose()?;
        let delta = match (psnr, self.stages.last().and_then(|s| s.psnr)) {
            (Some(a), Some(b)) => Some(a - b),
            _ => None,
        };
        self.stages.push(StageReport { stage: stage.into(), psnr, delta });
        Ok(())
    }
}

fn zero_pad(k: &Array2<f64>, pad: usize) -> Array2<f64> {
    let (h, w) = k.dim();
    let mut out = Array2::zeros((h + 2 * pad, w + 2 * pad));
    out.slice_mut(s![pad..pad + h, pad..pad + w]).assign(k);
    out
}

fn correct_channel(x: &Array2<f64>, psf: &Array2<f64>, mixture: &GaussianMixture2D, opts: &CorrectOptions) -> Result<(Array2<f64>, Array2<f64>)> {
    let (h, w) = x.dim();
    let set = if opts.occ {
        offsets_from_mixture(mixture, opts.m)?
    } else {
        let (cx, cy) = centroid_of(psf, 1.0);
        OffsetSet { m: 1, offsets: vec![[cx, cy]], weights: vec![1.0] }
    };
    let reach = set.offsets.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    let kernel = zero_pad(psf, reach.ceil() as usize + 1);
    let (kh, kw) = kernel.dim();
    // aggregation commutes with the blur, so applying it to the PSF gives the composite kernel
    let composite = occ_plane(&kernel, &OffsetField::uniform(kh, kw, &set))?;
    // the forward blur reads zeros outside the frame; undo the rim darkening
    // with the blurred all-ones image before aligning
    let mass = convolve_fft(&Array2::ones((h, w)), psf)?;
    let normalized = Array2::from_shape_fn((h, w), |i| x[i] / mass[i].max(MASS_FLOOR));
    let aligned = if opts.occ {
        // edge-replicated margin keeps the taps on data
        let pad = reach.ceil() as usize + 2;
        let padded = replicate_pad(&normalized, pad, pad);
        let (ph, pw) = padded.dim();
        occ_plane(&padded, &OffsetField::uniform(ph, pw, &set))?.slice(s![pad..pad + h, pad..pad + w]).to_owned()
    } else {
        normalized
    };
    let restored = wiener_deconvolve(&aligned, &composite, opts.snr)?.mapv(|v| v.clamp(0.0, 1.0));
    Ok((aligned, restored))
}

/// Prior inverse, then per-channel aggregation with mixture-derived offsets,
/// then Wiener deconvolution against the composite kernel. With `occ`
/// disabled the Wiener stage uses the centroid-aligned PSF alone.
pub fn correct_pipeline(
    degraded: &ImageTensor,
    cfg: &DegradeConfig,
    mixtures: &[GaussianMixture2D],
    opts: &CorrectOptions,
    reference: Option<&ImageTensor>,
) -> Result<(ImageTensor, CorrectionReport)> {
    let c = degraded.channels();
    if mixtures.len() != c {
        return Err(Error::dim("mixtures", c, mixtures.len()));
    }
    let mut report = CorrectionReport::default();
    let lin = degraded.to_linear();
    report.record("degraded", &lin, reference)?;
    let inv = prior_inverse_correct(&lin, cfg, opts.epsilon_floor)?;
    report.record("prior_inverse", &inv, reference)?;
    let per: Vec<(Array2<f64>, Array2<f64>)> = (0..c)
        .into_par_iter()
        .map(|ch| {
            let (psf, _, _) = cfg.channel_terms(ch, c)?;
            correct_channel(&inv.plane_f64(ch), psf, &mixtures[ch], opts)
        })
        .collect::<Result<_>>()?;
    if opts.occ {
        let aligned: Vec<Array2<f64>> = per.iter().map(|p| p.0.mapv(|v| v.clamp(0.0, 1.0))).collect();
        report.record("occ", &ImageTensor::from_channels(&aligned)?, reference)?;
    }
    let restored: Vec<Array2<f64>> = per.into_iter().map(|p| p.1).collect();
    let out = ImageTensor::from_channels(&restored)?;
    report.record("wiener", &out, reference)?;
    Ok((out, report))
}
