//! Browser demo. Generates a synthetic splice, shows its edge label, lets the
//! user threshold stand-in probability maps with edge-enhanced inference, and
//! applies the robustness perturbations.
//!
//! No trained network ships with the page. The probability maps are the
//! ground truth blurred and corrupted with noise, which is enough to show how
//! the two thresholds interact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splice_mfcn::datagen::{generate_sample, GenParams};
use splice_mfcn::masks::derive_edge_label;
use splice_mfcn::metrics::{confusion, f1, mcc};
use splice_mfcn::perturb::{add_awgn, blur_plane, measure_snr, Perturbation};
use splice_mfcn::postprocess::{edge_enhanced_combine, threshold, ProbabilityMap};
use splice_mfcn::BinaryMask;
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn mask_rgba(m: &BinaryMask) -> Vec<u8> {
    m.values()
        .iter()
        .flat_map(|&v| {
            if v {
                [255, 255, 255, 255]
            } else {
                [0, 0, 0, 255]
            }
        })
        .collect()
}

fn map_rgba(m: &ProbabilityMap) -> Vec<u8> {
    m.values()
        .iter()
        .flat_map(|&p| {
            let g = (p * 255.0).round() as u8;
            [g, g, g, 255]
        })
        .collect()
}

fn rgb_rgba(img: &image::RgbImage) -> Vec<u8> {
    img.pixels().flat_map(|p| [p[0], p[1], p[2], 255]).collect()
}

/// Blurred label plus uniform noise, clamped to [0, 1].
fn stand_in_map(
    label: &BinaryMask,
    sigma: f64,
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> ProbabilityMap {
    let (h, w) = (label.height(), label.width());
    let plane: Vec<f64> = label
        .values()
        .iter()
        .map(|&v| f64::from(u8::from(v)))
        .collect();
    let smooth = blur_plane(&plane, h, w, sigma).expect("positive sigma");
    let data = smooth
        .into_iter()
        .map(|v| (v + noise * rng.random_range(-1.0..1.0)).clamp(0.0, 1.0))
        .collect();
    ProbabilityMap::new(h, w, data).expect("finite values in range")
}

#[wasm_bindgen]
pub struct Demo {
    image: image::RgbImage,
    surface: BinaryMask,
    edge: BinaryMask,
    surface_map: ProbabilityMap,
    edge_map: ProbabilityMap,
    seed: u64,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, size: usize, noise: f64) -> Result<Demo, JsError> {
        let params = GenParams {
            height: size,
            width: size,
            ..GenParams::default()
        };
        let sample = generate_sample(&params, seed).map_err(js_err)?;
        let edge = derive_edge_label(&sample.surface, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let surface_map = stand_in_map(&sample.surface, 2.0, noise, &mut rng);
        let edge_map = stand_in_map(&edge, 1.0, noise, &mut rng);
        Ok(Demo {
            image: sample.image,
            edge,
            surface: sample.surface,
            surface_map,
            edge_map,
            seed,
        })
    }

    pub fn size(&self) -> usize {
        self.surface.width()
    }

    pub fn image_rgba(&self) -> Vec<u8> {
        rgb_rgba(&self.image)
    }

    pub fn surface_rgba(&self) -> Vec<u8> {
        mask_rgba(&self.surface)
    }

    pub fn edge_rgba(&self) -> Vec<u8> {
        mask_rgba(&self.edge)
    }

    pub fn surface_map_rgba(&self) -> Vec<u8> {
        map_rgba(&self.surface_map)
    }

    pub fn edge_map_rgba(&self) -> Vec<u8> {
        map_rgba(&self.edge_map)
    }

    /// Binary output of edge-enhanced inference.
    pub fn combine_rgba(&self, t_surface: f64, t_edge: f64) -> Result<Vec<u8>, JsError> {
        let m = edge_enhanced_combine(&self.surface_map, &self.edge_map, t_surface, t_edge)
            .map_err(js_err)?;
        Ok(mask_rgba(&m))
    }

    /// `[f1_plain, mcc_plain, f1_enhanced, mcc_enhanced]` against the ground
    /// truth, where "plain" thresholds the surface map alone.
    pub fn scores(&self, t_surface: f64, t_edge: f64) -> Result<Vec<f64>, JsError> {
        let plain =
            confusion(&threshold(&self.surface_map, t_surface), &self.surface).map_err(js_err)?;
        let combined = edge_enhanced_combine(&self.surface_map, &self.edge_map, t_surface, t_edge)
            .map_err(js_err)?;
        let enhanced = confusion(&combined, &self.surface).map_err(js_err)?;
        Ok(vec![f1(&plain), mcc(&plain), f1(&enhanced), mcc(&enhanced)])
    }

    /// Perturbed image for `jpeg:Q`, `blur:SIGMA` or `awgn:DB`.
    pub fn perturb_rgba(&self, spec: &str) -> Result<Vec<u8>, JsError> {
        let p: Perturbation = spec.parse().map_err(js_err)?;
        Ok(rgb_rgba(&p.apply(&self.image, self.seed).map_err(js_err)?))
    }

    /// SNR in dB actually achieved by `awgn` at `target_db`, before clamping.
    pub fn measured_snr(&self, target_db: f64) -> Result<f64, JsError> {
        let noisy = add_awgn(&self.image, target_db, self.seed).map_err(js_err)?;
        measure_snr(&self.image, &noisy.pre_clamp).map_err(js_err)
    }
}
