//! Metalens imaging toolkit: phase-profile design, Fresnel PSF simulation,
//! optical priors, Gaussian-mixture PSF models, chromatic degradation
//! synthesis, deterministic correction and image-quality metrics.

pub mod cli;
pub mod correct;
pub mod degrade;
pub mod error;
pub mod fft;
pub mod field;
pub mod fsutil;
pub mod imaging;
pub mod lens;
pub mod metrics;
pub mod priors;
pub mod propagate;
pub mod psfmodel;
pub mod raster;
pub mod synth;
pub mod units;

pub use error::{Error, Result};
