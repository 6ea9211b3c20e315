use std::path::PathBuf;

/// Errors produced by the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("under-sampled: grid pitch {pitch_um} um exceeds the required {required_pitch_um} um")]
    UnderSampled { pitch_um: f64, required_pitch_um: f64 },

    #[error("aliasing: propagation distance {distance_um} um exceeds the sampling limit {limit_um} um")]
    Aliasing { distance_um: f64, limit_um: f64 },

    #[error("wavelength {wavelength_nm} nm outside the design band [{min_nm}, {max_nm}] nm")]
    OutOfBand { wavelength_nm: f64, min_nm: f64, max_nm: f64 },

    #[error("field angle {theta} rad exceeds the model bound {theta_max} rad")]
    OutOfModel { theta: f64, theta_max: f64 },

    #[error("dimension mismatch in `{operand}`: expected {expected}, got {actual}")]
    Dimension { operand: String, expected: String, actual: String },

    #[error("detection failed: {0}")]
    Detection(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("{slots} offset slots cannot hold {components} mixture components")]
    InsufficientSlots { slots: usize, components: usize },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: u32, num_classes: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn dim(operand: &str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Dimension {
            operand: operand.to_string(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::Image(_))
    }
}
