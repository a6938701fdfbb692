//! Robustness perturbations: JPEG recompression, Gaussian blur and additive
//! white Gaussian noise.

mod blur;
mod jpeg;
mod noise;

use std::fmt;
use std::str::FromStr;

use image::RgbImage;

use crate::error::{Error, Result};

pub use blur::{blur_plane, gaussian_blur, gaussian_kernel};
pub use jpeg::{encode_jpeg, jpeg_recompress, quality_scale, scale_table, BASE_CHROMA, BASE_LUMA};
pub use noise::{add_awgn, measure_snr, noise_sigma, signal_power, NoisyImage};

/// One perturbation setting from the robustness protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Perturbation {
    Jpeg { quality: u8 },
    Blur { sigma: f64 },
    Awgn { snr_db: f64 },
}

impl Perturbation {
    /// `seed` only affects AWGN.
    pub fn apply(&self, img: &RgbImage, seed: u64) -> Result<RgbImage> {
        match *self {
            Perturbation::Jpeg { quality } => jpeg_recompress(img, quality),
            Perturbation::Blur { sigma } => gaussian_blur(img, sigma),
            Perturbation::Awgn { snr_db } => Ok(add_awgn(img, snr_db, seed)?.image),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Perturbation::Jpeg { .. } => "jpeg",
            Perturbation::Blur { .. } => "blur",
            Perturbation::Awgn { .. } => "awgn",
        }
    }

    /// Quality, σ or SNR.
    pub fn level(&self) -> f64 {
        match *self {
            Perturbation::Jpeg { quality } => f64::from(quality),
            Perturbation::Blur { sigma } => sigma,
            Perturbation::Awgn { snr_db } => snr_db,
        }
    }
}

impl fmt::Display for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind(), self.level())
    }
}

/// `jpeg:50`, `blur:1.5`, `awgn:20`.
impl FromStr for Perturbation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::Config(format!(
                "bad perturbation {s:?} (expected jpeg:Q, blur:SIGMA or awgn:DB)"
            ))
        };
        let (kind, level) = s.trim().split_once(':').ok_or_else(bad)?;
        match kind {
            "jpeg" => {
                let quality: u8 = level.parse().map_err(|_| bad())?;
                quality_scale(quality).map_err(|_| bad())?;
                Ok(Perturbation::Jpeg { quality })
            }
            "blur" => {
                let sigma: f64 = level.parse().map_err(|_| bad())?;
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(bad());
                }
                Ok(Perturbation::Blur { sigma })
            }
            "awgn" => {
                let snr_db: f64 = level.parse().map_err(|_| bad())?;
                if snr_db.is_nan() {
                    return Err(bad());
                }
                Ok(Perturbation::Awgn { snr_db })
            }
            _ => Err(bad()),
        }
    }
}

/// The settings used for the three robustness tables.
pub fn protocol() -> Vec<Perturbation> {
    let mut out: Vec<Perturbation> = [70, 50]
        .map(|quality| Perturbation::Jpeg { quality })
        .into();
    out.extend([0.5, 1.0, 1.5, 2.0].map(|sigma| Perturbation::Blur { sigma }));
    out.extend([25.0, 20.0, 15.0].map(|snr_db| Perturbation::Awgn { snr_db }));
    out
}
