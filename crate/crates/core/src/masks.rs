//! Binary ground-truth masks: file I/O, edge labels, class weighting and
//! mask recovery from spliced/host image pairs.

use std::path::Path;
use std::str::FromStr;

use image::{DynamicImage, GrayImage, Luma, RgbImage};

use crate::error::{Error, Result};
use crate::morphology;

/// Per-pixel {0,1} labels. `true` marks a spliced (or edge-positive) pixel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    h: usize,
    w: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(h: usize, w: usize) -> Self {
        BinaryMask {
            h,
            w,
            data: vec![false; h * w],
        }
    }

    pub fn from_values(h: usize, w: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::shape(
                "BinaryMask::from_values",
                format!("{} values for {h}x{w}", h * w),
                data.len(),
            ));
        }
        Ok(BinaryMask { h, w, data })
    }

    /// Values must be 0 or 1.
    pub fn from_u8(h: usize, w: usize, data: &[u8]) -> Result<Self> {
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::invalid(
                "BinaryMask::from_u8",
                format!("value {v} outside {{0, 1}}"),
            ));
        }
        Self::from_values(h, w, data.iter().map(|&v| v == 1).collect())
    }

    pub fn from_fn(h: usize, w: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let data = (0..h * w).map(|i| f(i / w, i % w)).collect();
        BinaryMask { h, w, data }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn values(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.w + x] = v;
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn complement(&self) -> Self {
        BinaryMask {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|v| !v).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        BinaryMask::from_fn(self.w, self.h, |y, x| self.get(x, y))
    }

    fn check_same(&self, op: &'static str, other: &BinaryMask) -> Result<()> {
        if (self.h, self.w) != (other.h, other.w) {
            return Err(Error::shape(
                op,
                format!("{}x{}", self.h, self.w),
                format!("{}x{}", other.h, other.w),
            ));
        }
        Ok(())
    }

    pub fn and(&self, other: &BinaryMask) -> Result<Self> {
        self.check_same("BinaryMask::and", other)?;
        Ok(BinaryMask {
            h: self.h,
            w: self.w,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| *a && *b)
                .collect(),
        })
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        (self.h, self.w) == (other.h, other.w)
            && self.data.iter().zip(&other.data).all(|(a, b)| !a || *b)
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| v as u8).collect()
    }
}

/// Loss weights for the authentic (0) and spliced (1) classes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassWeights {
    pub authentic: f64,
    pub spliced: f64,
}

impl ClassWeights {
    pub fn new(authentic: f64, spliced: f64) -> Result<Self> {
        let w = ClassWeights { authentic, spliced };
        w.validate()?;
        Ok(w)
    }

    pub fn balanced() -> Self {
        ClassWeights {
            authentic: 1.0,
            spliced: 1.0,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.authentic) || !ok(self.spliced) {
            return Err(Error::invalid(
                "ClassWeights",
                format!(
                    "weights must be finite and positive, got ({}, {})",
                    self.authentic, self.spliced
                ),
            ));
        }
        Ok(())
    }
}

/// Boundary band of the spliced region: spliced pixels with at least one
/// authentic 4-neighbour inside the image, dilated by a
/// (2·band_halfwidth+1)² square.
pub fn derive_edge_label(surface: &BinaryMask, band_halfwidth: usize) -> BinaryMask {
    let (h, w) = (surface.height(), surface.width());
    let boundary = BinaryMask::from_fn(h, w, |y, x| {
        surface.get(y, x)
            && ((y > 0 && !surface.get(y - 1, x))
                || (y + 1 < h && !surface.get(y + 1, x))
                || (x > 0 && !surface.get(y, x - 1))
                || (x + 1 < w && !surface.get(y, x + 1)))
    });
    morphology::dilate(&boundary, band_halfwidth)
}

/// Median-frequency balancing. A class's frequency is its pixel count over
/// the total pixels of the images in which it appears; its weight is the
/// median frequency divided by its own. Absent classes get weight 1.
pub fn median_freq_weights<'a, I>(masks: I) -> Result<ClassWeights>
where
    I: IntoIterator<Item = &'a BinaryMask>,
{
    // (class pixels, pixels of images containing the class) per class
    let mut counts = [(0u64, 0u64); 2];
    let mut seen = 0usize;
    for m in masks {
        seen += 1;
        let total = m.len() as u64;
        let ones = m.count_ones() as u64;
        let zeros = total - ones;
        for (class, n) in [(0, zeros), (1, ones)] {
            if n > 0 {
                counts[class].0 += n;
                counts[class].1 += total;
            }
        }
    }
    if seen == 0 {
        return Err(Error::invalid(
            "median_freq_weights",
            "empty mask collection",
        ));
    }
    let freqs: Vec<Option<f64>> = counts
        .iter()
        .map(|&(n, d)| (n > 0).then(|| n as f64 / d as f64))
        .collect();
    let present: Vec<f64> = freqs.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::invalid(
            "median_freq_weights",
            "masks contain no pixels",
        ));
    }
    let median = present.iter().sum::<f64>() / present.len() as f64;
    let weight = |f: Option<f64>| f.map_or(1.0, |f| median / f);
    ClassWeights::new(weight(freqs[0]), weight(freqs[1]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairMaskParams {
    /// On the 0–255 scale; a pixel is a candidate when its largest channel
    /// difference strictly exceeds this.
    pub diff_threshold: f64,
    pub min_component_area: usize,
}

impl Default for PairMaskParams {
    fn default() -> Self {
        PairMaskParams {
            diff_threshold: 16.0,
            min_component_area: 64,
        }
    }
}

/// Recovers the pasted region from a spliced image and its host.
pub fn mask_from_pair(
    spliced: &RgbImage,
    host: &RgbImage,
    params: PairMaskParams,
) -> Result<BinaryMask> {
    if spliced.dimensions() != host.dimensions() {
        return Err(Error::shape(
            "mask_from_pair",
            format!("{:?}", spliced.dimensions()),
            format!("{:?}", host.dimensions()),
        ));
    }
    let (w, h) = spliced.dimensions();
    let (w, h) = (w as usize, h as usize);
    let candidates = BinaryMask::from_fn(h, w, |y, x| {
        let a = spliced.get_pixel(x as u32, y as u32).0;
        let b = host.get_pixel(x as u32, y as u32).0;
        let diff = (0..3).map(|c| a[c].abs_diff(b[c])).max().unwrap_or(0);
        f64::from(diff) > params.diff_threshold
    });
    let closed = morphology::close(&candidates, 1, 2);
    let opened = morphology::open(&closed, 1, 1);
    Ok(morphology::remove_small_components(
        &opened,
        params.min_component_area,
    ))
}

/// How manipulated pixels are encoded in mask image files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskConvention {
    /// Manipulated = 0 (black), authentic = 255.
    #[default]
    ManipulatedIsBlack,
    ManipulatedIsWhite,
}

impl FromStr for MaskConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "manipulated-is-black" => Ok(MaskConvention::ManipulatedIsBlack),
            "manipulated-is-white" => Ok(MaskConvention::ManipulatedIsWhite),
            other => Err(Error::invalid(
                "MaskConvention",
                format!("unknown convention {other:?}"),
            )),
        }
    }
}

impl std::fmt::Display for MaskConvention {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MaskConvention::ManipulatedIsBlack => "manipulated-is-black",
            MaskConvention::ManipulatedIsWhite => "manipulated-is-white",
        })
    }
}

/// File values below 128 are black.
pub fn mask_from_gray(gray: &GrayImage, convention: MaskConvention) -> BinaryMask {
    let (w, h) = gray.dimensions();
    let data = gray
        .pixels()
        .map(|p| {
            let black = p.0[0] < 128;
            match convention {
                MaskConvention::ManipulatedIsBlack => black,
                MaskConvention::ManipulatedIsWhite => !black,
            }
        })
        .collect();
    BinaryMask::from_values(h as usize, w as usize, data).expect("dimensions from image")
}

pub fn mask_to_gray(mask: &BinaryMask, convention: MaskConvention) -> GrayImage {
    let (on, off) = match convention {
        MaskConvention::ManipulatedIsBlack => (0u8, 255u8),
        MaskConvention::ManipulatedIsWhite => (255, 0),
    };
    GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([if mask.get(y as usize, x as usize) {
            on
        } else {
            off
        }])
    })
}

/// Reduces a decoded image to 8-bit gray, refusing colour images whose
/// channels disagree anywhere.
pub(crate) fn to_gray_strict(img: DynamicImage, path: &Path) -> Result<GrayImage> {
    match img {
        DynamicImage::ImageLuma8(g) => Ok(g),
        DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_) => Ok(img.to_luma8()),
        DynamicImage::ImageRgb8(rgb) => {
            if rgb.pixels().all(|p| p.0[0] == p.0[1] && p.0[1] == p.0[2]) {
                Ok(DynamicImage::ImageRgb8(rgb).to_luma8())
            } else {
                Err(Error::image(path, "colour mask has unequal channels"))
            }
        }
        DynamicImage::ImageRgba8(rgba) => {
            if rgba.pixels().all(|p| p.0[0] == p.0[1] && p.0[1] == p.0[2]) {
                Ok(GrayImage::from_fn(rgba.width(), rgba.height(), |x, y| {
                    Luma([rgba.get_pixel(x, y).0[0]])
                }))
            } else {
                Err(Error::image(path, "colour mask has unequal channels"))
            }
        }
        other => Err(Error::image(
            path,
            format!("unsupported mask pixel format {:?}", other.color()),
        )),
    }
}

pub fn load_mask(path: impl AsRef<Path>, convention: MaskConvention) -> Result<BinaryMask> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::image(path, e))?;
    let gray = to_gray_strict(img, path)?;
    Ok(mask_from_gray(&gray, convention))
}

pub fn save_mask(
    mask: &BinaryMask,
    path: impl AsRef<Path>,
    convention: MaskConvention,
) -> Result<()> {
    let path = path.as_ref();
    mask_to_gray(mask, convention)
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::image(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(h: usize, w: usize, y0: usize, x0: usize, side: usize) -> BinaryMask {
        BinaryMask::from_fn(h, w, |y, x| {
            (y0..y0 + side).contains(&y) && (x0..x0 + side).contains(&x)
        })
    }

    #[test]
    fn empty_mask_has_no_edge() {
        assert_eq!(derive_edge_label(&BinaryMask::new(6, 6), 1).count_ones(), 0);
    }

    #[test]
    fn edge_of_square_is_its_ring() {
        let e = derive_edge_label(&square(5, 5, 1, 1, 3), 0);
        // Enumerated by hand: every square pixel except the centre has an
        // authentic 4-neighbour.
        let expect = BinaryMask::from_fn(5, 5, |y, x| {
            (1..=3).contains(&y) && (1..=3).contains(&x) && !(y == 2 && x == 2)
        });
        assert_eq!(e, expect);
    }

    #[test]
    fn edge_of_point_with_band_is_block() {
        let e = derive_edge_label(&square(5, 5, 2, 2, 1), 1);
        assert_eq!(e, square(5, 5, 1, 1, 3));
    }

    #[test]
    fn full_mask_has_no_edge() {
        let full = BinaryMask::from_values(4, 4, vec![true; 16]).unwrap();
        assert_eq!(derive_edge_label(&full, 2).count_ones(), 0);
    }

    #[test]
    fn median_frequency_ninety_ten() {
        let m = BinaryMask::from_fn(10, 10, |y, _| y == 0);
        let w = median_freq_weights([&m]).unwrap();
        assert!((w.authentic - 0.5 / 0.9).abs() < 1e-12);
        assert!((w.spliced - 5.0).abs() < 1e-12);
        assert!((w.authentic - 0.5556).abs() < 1e-4);
    }

    #[test]
    fn median_frequency_balanced() {
        let m = BinaryMask::from_fn(4, 4, |y, _| y < 2);
        let w = median_freq_weights([&m]).unwrap();
        assert_eq!((w.authentic, w.spliced), (1.0, 1.0));
    }

    #[test]
    fn median_frequency_counts_only_images_with_class() {
        let clean = BinaryMask::new(2, 2);
        let one = BinaryMask::from_u8(2, 2, &[1, 0, 0, 0]).unwrap();
        let w = median_freq_weights([&clean, &one]).unwrap();
        // freq_auth = 7/8, freq_spliced = 1/4, median = 9/16
        assert!((w.authentic - 9.0 / 14.0).abs() < 1e-12);
        assert!((w.spliced - 9.0 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn median_frequency_absent_class_and_empty() {
        let clean = BinaryMask::new(3, 3);
        assert_eq!(
            median_freq_weights([&clean]).unwrap(),
            ClassWeights::balanced()
        );
        assert!(median_freq_weights(std::iter::empty()).is_err());
    }

    fn flat(w: u32, h: u32, v: u8) -> RgbImage {
        RgbImage::from_pixel(w, h, image::Rgb([v, v, v]))
    }

    #[test]
    fn identical_pair_gives_empty_mask() {
        let a = flat(32, 32, 90);
        let m = mask_from_pair(&a, &a, PairMaskParams::default()).unwrap();
        assert_eq!(m.count_ones(), 0);
    }

    #[test]
    fn pasted_patch_is_recovered_exactly() {
        let host = RgbImage::from_fn(40, 40, |x, y| {
            image::Rgb([(x * 3) as u8, (y * 5) as u8, 60])
        });
        let mut spliced = host.clone();
        for y in 12..22 {
            for x in 20..30 {
                let p = host.get_pixel(x, y).0;
                spliced.put_pixel(x, y, image::Rgb([p[0] + 100, p[1], p[2]]));
            }
        }
        let params = PairMaskParams {
            diff_threshold: 16.0,
            min_component_area: 64,
        };
        let m = mask_from_pair(&spliced, &host, params).unwrap();
        assert_eq!(m, square(40, 40, 12, 20, 10));
        assert_eq!(mask_from_pair(&host, &spliced, params).unwrap(), m);
    }

    #[test]
    fn single_pixel_difference_is_filtered() {
        let host = flat(16, 16, 10);
        let mut spliced = host.clone();
        spliced.put_pixel(8, 8, image::Rgb([200, 10, 10]));
        let m = mask_from_pair(&spliced, &host, PairMaskParams::default()).unwrap();
        assert_eq!(m.count_ones(), 0);
    }

    #[test]
    fn pair_dimension_mismatch() {
        assert!(mask_from_pair(&flat(4, 4, 0), &flat(4, 5, 0), PairMaskParams::default()).is_err());
    }

    #[test]
    fn gray_binarization_rule() {
        let gray = GrayImage::from_raw(4, 1, vec![0, 127, 128, 255]).unwrap();
        let black = mask_from_gray(&gray, MaskConvention::ManipulatedIsBlack);
        assert_eq!(black.values(), &[true, true, false, false]);
        let white = mask_from_gray(&gray, MaskConvention::ManipulatedIsWhite);
        assert_eq!(white.values(), &[false, false, true, true]);
    }

    #[test]
    fn all_black_file_is_all_manipulated() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        GrayImage::new(5, 3).save(&p).unwrap();
        let m = load_mask(&p, MaskConvention::ManipulatedIsBlack).unwrap();
        assert_eq!(m.count_ones(), 15);
        assert_eq!((m.height(), m.width()), (3, 5));
    }

    #[test]
    fn colour_mask_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        RgbImage::from_pixel(2, 2, image::Rgb([255, 0, 0]))
            .save(&p)
            .unwrap();
        assert!(load_mask(&p, MaskConvention::ManipulatedIsBlack).is_err());
        let q = dir.path().join("g.png");
        RgbImage::from_pixel(2, 2, image::Rgb([0, 0, 0]))
            .save(&q)
            .unwrap();
        assert_eq!(
            load_mask(&q, MaskConvention::ManipulatedIsBlack)
                .unwrap()
                .count_ones(),
            4
        );
        assert!(load_mask(
            dir.path().join("missing.png"),
            MaskConvention::ManipulatedIsBlack
        )
        .is_err());
    }
}
