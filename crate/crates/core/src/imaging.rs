//! Image tensors, sRGB transfer functions and PNG I/O.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use ndarray::{Array2, Array3, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    #[default]
    Linear,
    Srgb8,
}

/// Planar `[channel, row, col]` image, one or three channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub data: Array3<f32>,
    pub color_space: ColorSpace,
}

impl ImageTensor {
    pub fn new(data: Array3<f32>, color_space: ColorSpace) -> Result<Self> {
        let c = data.dim().0;
        if c != 1 && c != 3 {
            return Err(Error::dim("image channels", "1 or 3", c));
        }
        if data.dim().1 == 0 || data.dim().2 == 0 {
            return Err(Error::InvalidArgument("image must be non-empty".into()));
        }
        Ok(Self { data, color_space })
    }

    pub fn linear(data: Array3<f32>) -> Result<Self> {
        Self::new(data, ColorSpace::Linear)
    }

    pub fn from_channels(channels: &[Array2<f64>]) -> Result<Self> {
        let (h, w) = channels.first().map(|c| c.dim()).unwrap_or((0, 0));
        if channels.iter().any(|c| c.dim() != (h, w)) {
            return Err(Error::InvalidArgument("channel planes differ in shape".into()));
        }
        let data = Array3::from_shape_fn((channels.len(), h, w), |(c, y, x)| channels[c][[y, x]] as f32);
        Self::linear(data)
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn plane(&self, c: usize) -> ArrayView2<'_, f32> {
        self.data.index_axis(ndarray::Axis(0), c)
    }

    pub fn plane_f64(&self, c: usize) -> Array2<f64> {
        self.plane(c).mapv(f64::from)
    }

    pub fn clamped(&self) -> Self {
        Self { data: self.data.mapv(|v| v.clamp(0.0, 1.0)), color_space: self.color_space }
    }

    pub fn to_linear(&self) -> Self {
        match self.color_space {
            ColorSpace::Linear => self.clone(),
            ColorSpace::Srgb8 => Self { data: self.data.mapv(srgb_to_linear), color_space: ColorSpace::Linear },
        }
    }

    pub fn to_srgb(&self) -> Self {
        match self.color_space {
            ColorSpace::Srgb8 => self.clone(),
            ColorSpace::Linear => Self { data: self.data.mapv(linear_to_srgb), color_space: ColorSpace::Srgb8 },
        }
    }

    /// Replicates a single channel to three.
    pub fn to_rgb(&self) -> Self {
        if self.channels() == 3 {
            return self.clone();
        }
        let (_, h, w) = self.data.dim();
        let data = Array3::from_shape_fn((3, h, w), |(_, y, x)| self.data[[0, y, x]]);
        Self { data, color_space: self.color_space }
    }
}

pub fn srgb_to_linear(v: f32) -> f32 {
    let v = f64::from(v);
    let l = if v <= 0.04045 { v / 12.92 } else { ((v + 0.055) / 1.055).powf(2.4) };
    l as f32
}

pub fn linear_to_srgb(v: f32) -> f32 {
    let v = f64::from(v.clamp(0.0, 1.0));
    let s = if v <= 0.0031308 { v * 12.92 } else { 1.055 * v.powf(1.0 / 2.4) - 0.055 };
    s as f32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum BitDepth {
    #[serde(rename = "8")]
    Eight,
    #[default]
    #[serde(rename = "16")]
    Sixteen,
}

/// Reads a PNG; sRGB-encoded samples are linearized when `linearize` is set.
pub fn read_png(path: &Path, linearize: bool) -> Result<ImageTensor> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = matches!(
        img,
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLumaA16(_)
    );
    let data = if gray {
        let buf = img.to_luma16();
        Array3::from_shape_fn((1, h, w), |(_, y, x)| buf.get_pixel(x as u32, y as u32)[0] as f32 / 65535.0)
    } else {
        let buf = img.to_rgb16();
        Array3::from_shape_fn((3, h, w), |(c, y, x)| buf.get_pixel(x as u32, y as u32)[c] as f32 / 65535.0)
    };
    let t = ImageTensor::new(data, ColorSpace::Srgb8)?;
    Ok(if linearize { t.to_linear() } else { t })
}

/// PNG bytes of `img`; linear tensors are sRGB-encoded first.
pub fn encode_png(img: &ImageTensor, depth: BitDepth) -> Result<Vec<u8>> {
    let enc = img.to_srgb();
    let (c, h, w) = enc.data.dim();
    let q = |v: f32, max: f32| (v.clamp(0.0, 1.0) * max).round();
    let dynimg = match (c, depth) {
        (1, BitDepth::Eight) => DynamicImage::ImageLuma8(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            Luma([q(enc.data[[0, y as usize, x as usize]], 255.0) as u8])
        })),
        (1, BitDepth::Sixteen) => DynamicImage::ImageLuma16(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            Luma([q(enc.data[[0, y as usize, x as usize]], 65535.0) as u16])
        })),
        (_, BitDepth::Eight) => DynamicImage::ImageRgb8(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            let p = |ch: usize| q(enc.data[[ch, y as usize, x as usize]], 255.0) as u8;
            Rgb([p(0), p(1), p(2)])
        })),
        (_, BitDepth::Sixteen) => DynamicImage::ImageRgb16(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            let p = |ch: usize| q(enc.data[[ch, y as usize, x as usize]], 65535.0) as u16;
            Rgb([p(0), p(1), p(2)])
        })),
    };
    let mut bytes = Vec::new();
    dynimg.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)?;
    Ok(bytes)
}

pub fn write_png(path: &Path, img: &ImageTensor, depth: BitDepth) -> Result<()> {
    write_atomic(path, &encode_png(img, depth)?)
}

/// Reads a single-channel label PNG as integer class ids.
pub fn read_labels(path: &Path) -> Result<Array2<u32>> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let is16 = matches!(img, DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_));
    Ok(if is16 {
        let b = img.to_luma16();
        Array2::from_shape_fn((h, w), |(y, x)| b.get_pixel(x as u32, y as u32)[0] as u32)
    } else {
        let b = img.to_luma8();
        Array2::from_shape_fn((h, w), |(y, x)| b.get_pixel(x as u32, y as u32)[0] as u32)
    })
}
