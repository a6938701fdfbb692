use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Output of [`add_awgn`]: the 8-bit image and the float values before
/// clamping, for measuring the achieved SNR.
#[derive(Debug, Clone)]
pub struct NoisyImage {
    pub image: RgbImage,
    pub pre_clamp: Vec<f64>,
}

fn variance(values: impl ExactSizeIterator<Item = f64> + Clone) -> f64 {
    let n = values.len() as f64;
    let mean = values.clone().sum::<f64>() / n;
    values.map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Population variance of every channel value.
pub fn signal_power(img: &RgbImage) -> f64 {
    variance(img.as_raw().iter().map(|&v| f64::from(v)))
}

/// `σ_n = √(P / 10^(snr/10))`.
pub fn noise_sigma(power: f64, snr_db: f64) -> f64 {
    (power / 10f64.powf(snr_db / 10.0)).sqrt()
}

/// Adds i.i.d. Gaussian noise scaled to reach `snr_db` against the image's
/// variance. `f64::INFINITY` adds nothing.
pub fn add_awgn(img: &RgbImage, snr_db: f64, seed: u64) -> Result<NoisyImage> {
    if snr_db.is_nan() {
        return Err(Error::invalid("add_awgn", "snr is NaN"));
    }
    let power = signal_power(img);
    if power == 0.0 {
        return Err(Error::invalid(
            "add_awgn",
            "constant image has zero signal power, SNR undefined",
        ));
    }
    let sigma = noise_sigma(power, snr_db);
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid("add_awgn", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pre_clamp: Vec<f64> = img
        .as_raw()
        .iter()
        .map(|&v| f64::from(v) + normal.sample(&mut rng))
        .collect();
    let raw = pre_clamp
        .iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    let image = RgbImage::from_raw(img.width(), img.height(), raw).expect("same length");
    Ok(NoisyImage { image, pre_clamp })
}

/// `10·log10(variance(clean) / mse)`; `+∞` when there is no noise.
pub fn measure_snr(clean: &RgbImage, noisy: &[f64]) -> Result<f64> {
    let raw = clean.as_raw();
    if raw.len() != noisy.len() {
        return Err(Error::shape("measure_snr", raw.len(), noisy.len()));
    }
    let mse = raw
        .iter()
        .zip(noisy)
        .map(|(&c, &n)| (n - f64::from(c)).powi(2))
        .sum::<f64>()
        / raw.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal_power(clean) / mse).log10())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(size: u32) -> RgbImage {
        RgbImage::from_fn(size, size, |x, y| {
            image::Rgb([
                (x % 256) as u8,
                ((x * y) % 251) as u8,
                ((3 * y + 40) % 256) as u8,
            ])
        })
    }

    #[test]
    fn sigma_formula() {
        assert!((noise_sigma(100.0, 20.0) - 1.0).abs() < 1e-12);
        assert_eq!(noise_sigma(100.0, f64::INFINITY), 0.0);
    }

    #[test]
    fn infinite_snr_is_identity() {
        let img = textured(16);
        let out = add_awgn(&img, f64::INFINITY, 3).unwrap();
        assert_eq!(out.image, img);
        assert_eq!(measure_snr(&img, &out.pre_clamp).unwrap(), f64::INFINITY);
    }

    #[test]
    fn constant_image_rejected() {
        let img = RgbImage::from_pixel(8, 8, image::Rgb([9, 9, 9]));
        assert!(add_awgn(&img, 20.0, 0).is_err());
    }

    #[test]
    fn seeded_and_reproducible() {
        let img = textured(32);
        let a = add_awgn(&img, 15.0, 11).unwrap();
        let b = add_awgn(&img, 15.0, 11).unwrap();
        let c = add_awgn(&img, 15.0, 12).unwrap();
        assert_eq!(a.image, b.image);
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn doubling_sigma_costs_six_db() {
        let img = textured(256);
        let noise = add_awgn(&img, 20.0, 5).unwrap();
        let doubled: Vec<f64> = img
            .as_raw()
            .iter()
            .zip(&noise.pre_clamp)
            .map(|(&c, &n)| f64::from(c) + 2.0 * (n - f64::from(c)))
            .collect();
        let drop =
            measure_snr(&img, &noise.pre_clamp).unwrap() - measure_snr(&img, &doubled).unwrap();
        assert!((drop - 20.0 * 2f64.log10()).abs() < 1e-9);
    }
}
