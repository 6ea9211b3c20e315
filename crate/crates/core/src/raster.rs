//! Binary raster container shared by every float32 artifact (complex fields,
//! PSF stacks, spatial priors, feature maps, weight bundles).
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset 0   8 bytes   magic "MSRASTER"
//! offset 8   u64       header length H in bytes
//! offset 16  H bytes   UTF-8 JSON header
//! offset 16+H          payload: float32 LE, row-major, last axis fastest;
//!                      complex payloads interleave (re, im)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;

pub const MAGIC: &[u8; 8] = b"MSRASTER";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    /// Interleaved complex float32.
    C32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterHeader {
    pub format_version: u32,
    pub kind: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl RasterHeader {
    pub fn new(kind: &str, dtype: DType, shape: Vec<usize>, meta: serde_json::Value) -> Self {
        Self { format_version: FORMAT_VERSION, kind: kind.to_string(), dtype, shape, meta }
    }

    /// Number of float32 scalars in the payload.
    pub fn scalar_count(&self) -> usize {
        let n: usize = self.shape.iter().product();
        match self.dtype {
            DType::F32 => n,
            DType::C32 => 2 * n,
        }
    }
}

pub fn encode(header: &RasterHeader, payload: &[f32]) -> Result<Vec<u8>> {
    if payload.len() != header.scalar_count() {
        return Err(Error::dim("raster payload", header.scalar_count(), payload.len()));
    }
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(16 + json.len() + 4 * payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(RasterHeader, Vec<f32>)> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Format("missing MSRASTER magic".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() < hlen {
        return Err(Error::Format("truncated raster header".into()));
    }
    let header: RasterHeader = serde_json::from_slice(&body[..hlen])?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported raster format_version {}",
            header.format_version
        )));
    }
    let payload = &body[hlen..];
    let n = header.scalar_count();
    if payload.len() != 4 * n {
        return Err(Error::Format(format!(
            "raster payload has {} bytes, header declares {} float32 values",
            payload.len(),
            n
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, values))
}

pub fn write_file(path: &Path, header: &RasterHeader, payload: &[f32]) -> Result<()> {
    fsutil::write_atomic(path, &encode(header, payload)?)
}

pub fn read_file(path: &Path) -> Result<(RasterHeader, Vec<f32>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Reads a file and checks its `kind`.
pub fn read_kind(path: &Path, kind: &str) -> Result<(RasterHeader, Vec<f32>)> {
    let (h, v) = read_file(path)?;
    if h.kind != kind {
        return Err(Error::Format(format!(
            "{} holds a `{}` raster, expected `{kind}`",
            path.display(),
            h.kind
        )));
    }
    Ok((h, v))
}
