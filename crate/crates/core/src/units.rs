//! Length units. Every length is carried internally in micrometres; text and
//! JSON inputs must name their unit explicitly.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LengthUnit {
    #[serde(rename = "mm")]
    Millimetre,
    #[serde(rename = "um")]
    Micrometre,
    #[serde(rename = "nm")]
    Nanometre,
}

impl LengthUnit {
    /// Size of one unit in micrometres.
    pub fn in_um(self) -> f64 {
        match self {
            LengthUnit::Millimetre => 1000.0,
            LengthUnit::Micrometre => 1.0,
            LengthUnit::Nanometre => 1e-3,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "mm" => Some(LengthUnit::Millimetre),
            "um" | "µm" | "μm" => Some(LengthUnit::Micrometre),
            "nm" => Some(LengthUnit::Nanometre),
            _ => None,
        }
    }
}

/// Parses `"2.6mm"`, `"532 nm"`, `"0.5um"` into micrometres.
pub fn parse_length(text: &str) -> Result<f64> {
    parse_length_with_default(text, None)
}

/// Like [`parse_length`], but a bare number is read in `default` units when given.
pub fn parse_length_with_default(text: &str, default: Option<LengthUnit>) -> Result<f64> {
    let t = text.trim();
    let split = t
        .find(|c: char| !(c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E')))
        .unwrap_or(t.len());
    let (num, unit) = t.split_at(split);
    let value: f64 = num
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("cannot parse length `{text}`")))?;
    let unit = if unit.trim().is_empty() {
        default.ok_or_else(|| {
            Error::InvalidArgument(format!("length `{text}` needs a unit suffix (mm, um, nm)"))
        })?
    } else {
        LengthUnit::parse(unit)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown length unit in `{text}`")))?
    };
    if !value.is_finite() {
        return Err(Error::InvalidArgument(format!("length `{text}` is not finite")));
    }
    Ok(value * unit.in_um())
}

/// Parses a comma-separated wavelength list; bare numbers are nanometres.
pub fn parse_wavelength_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_length_with_default(s, Some(LengthUnit::Nanometre)))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct Tagged {
    value: f64,
    unit: LengthUnit,
}

fn ser_in<S: Serializer>(um: f64, unit: LengthUnit, s: S) -> std::result::Result<S::Ok, S::Error> {
    Tagged { value: um / unit.in_um(), unit }.serialize(s)
}

fn de_any<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    let t = Tagged::deserialize(d)?;
    Ok(t.value * t.unit.in_um())
}

macro_rules! unit_serde {
    ($name:ident, $unit:expr) => {
        /// Serde adapter: stores a micrometre `f64` as `{"value", "unit"}`.
        pub mod $name {
            use super::*;
            pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
                ser_in(*v, $unit, s)
            }
            pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
                de_any(d)
            }
        }
    };
}

unit_serde!(as_mm, LengthUnit::Millimetre);
unit_serde!(as_um, LengthUnit::Micrometre);
unit_serde!(as_nm, LengthUnit::Nanometre);

/// Serde adapter for wavelength arrays stored in nanometres.
pub mod vec_as_nm {
    use super::*;

    #[derive(Serialize, Deserialize)]
    struct TaggedVec {
        values: Vec<f64>,
        unit: LengthUnit,
    }

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
        TaggedVec { values: v.iter().map(|x| x * 1e3).collect(), unit: LengthUnit::Nanometre }
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
        let t = TaggedVec::deserialize(d)?;
        Ok(t.values.into_iter().map(|x| x * t.unit.in_um()).collect())
    }
}
