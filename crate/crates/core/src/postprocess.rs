//! Turning head outputs into binary system output masks.

use std::collections::VecDeque;
use std::path::Path;

use image::{ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::masks::BinaryMask;
use crate::tensor::Tensor;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Per-pixel spliced-class probabilities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl ProbabilityMap {
    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::shape(
                "ProbabilityMap::new",
                format!("{} values for {h}x{w}", h * w),
                data.len(),
            ));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(
                "ProbabilityMap::new",
                format!("value {v} outside [0, 1]"),
            ));
        }
        Ok(ProbabilityMap { h, w, data })
    }

    pub fn from_fn(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        Self::new(h, w, (0..h * w).map(|i| f(i / w, i % w)).collect())
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }

    pub fn transpose(&self) -> Self {
        ProbabilityMap::from_fn(self.w, self.h, |y, x| self.get(x, y)).expect("values in range")
    }

    /// Crops the top-left `h × w` window.
    pub fn crop(&self, h: usize, w: usize) -> Result<Self> {
        if h > self.h || w > self.w {
            return Err(Error::shape(
                "ProbabilityMap::crop",
                format!("at most {}x{}", self.h, self.w),
                format!("{h}x{w}"),
            ));
        }
        Self::from_fn(h, w, |y, x| self.get(y, x))
    }
}

/// Spliced-class softmax probability of sample `n` of (n, 2, h, w) logits.
pub fn softmax_to_map(logits: &Tensor, n: usize) -> Result<ProbabilityMap> {
    let s = logits.shape();
    if s.c != 2 || n >= s.n {
        return Err(Error::shape(
            "softmax_to_map",
            format!("(>{n}, 2, h, w) logits"),
            s,
        ));
    }
    let z = logits.sample(n);
    let plane = s.plane();
    let data = (0..plane)
        .map(|p| {
            let (z0, z1) = (z[p], z[plane + p]);
            let m = z0.max(z1);
            let (e0, e1) = ((z0 - m).exp(), (z1 - m).exp());
            e1 / (e0 + e1)
        })
        .collect();
    ProbabilityMap::new(s.h, s.w, data)
}

/// Pixel is spliced iff its probability is at least `t`.
pub fn threshold(map: &ProbabilityMap, t: f64) -> BinaryMask {
    BinaryMask::from_values(map.h, map.w, map.data.iter().map(|&p| p >= t).collect())
        .expect("dimensions preserved")
}

/// Sets every background pixel that cannot reach the image border through
/// 4-connected background to foreground.
pub fn hole_fill(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = (mask.height(), mask.width());
    let src = mask.values();
    let mut outside = vec![false; h * w];
    let mut queue = VecDeque::new();
    let seed = |p: usize, outside: &mut Vec<bool>, queue: &mut VecDeque<usize>| {
        if !src[p] && !outside[p] {
            outside[p] = true;
            queue.push_back(p);
        }
    };
    for x in 0..w {
        seed(x, &mut outside, &mut queue);
        seed((h - 1) * w + x, &mut outside, &mut queue);
    }
    for y in 0..h {
        seed(y * w, &mut outside, &mut queue);
        seed(y * w + w - 1, &mut outside, &mut queue);
    }
    while let Some(p) = queue.pop_front() {
        let (y, x) = (p / w, p % w);
        if y > 0 {
            seed(p - w, &mut outside, &mut queue);
        }
        if y + 1 < h {
            seed(p + w, &mut outside, &mut queue);
        }
        if x > 0 {
            seed(p - 1, &mut outside, &mut queue);
        }
        if x + 1 < w {
            seed(p + 1, &mut outside, &mut queue);
        }
    }
    BinaryMask::from_values(h, w, outside.into_iter().map(|o| !o).collect())
        .expect("dimensions preserved")
}

/// Edge-enhanced inference: the thresholded surface mask intersected with the
/// hole-filled, thresholded edge mask.
pub fn edge_enhanced_combine(
    surface: &ProbabilityMap,
    edge: &ProbabilityMap,
    t_surface: f64,
    t_edge: f64,
) -> Result<BinaryMask> {
    if (surface.h, surface.w) != (edge.h, edge.w) {
        return Err(Error::shape(
            "edge_enhanced_combine",
            format!("{}x{}", surface.h, surface.w),
            format!("{}x{}", edge.h, edge.w),
        ));
    }
    for t in [t_surface, t_edge] {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid(
                "edge_enhanced_combine",
                format!("threshold {t} outside [0, 1]"),
            ));
        }
    }
    let s = threshold(surface, t_surface);
    let e = hole_fill(&threshold(edge, t_edge));
    s.and(&e)
}

/// 16-bit grayscale PNG with value `round(p · 65535)`.
pub fn save_probability_map(map: &ProbabilityMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_fn(map.w as u32, map.h as u32, |x, y| {
            Luma([(map.get(y as usize, x as usize) * 65535.0).round() as u16])
        });
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::image(path, e))
}

/// Reads 16-bit maps (value / 65535); 8-bit grayscale is accepted as
/// value / 255.
pub fn load_probability_map(path: impl AsRef<Path>) -> Result<ProbabilityMap> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::image(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        image::DynamicImage::ImageLuma16(g) => {
            g.pixels().map(|p| f64::from(p.0[0]) / 65535.0).collect()
        }
        image::DynamicImage::ImageLuma8(g) => {
            g.pixels().map(|p| f64::from(p.0[0]) / 255.0).collect()
        }
        other => {
            return Err(Error::image(
                path,
                format!(
                    "probability maps must be grayscale, got {:?}",
                    other.color()
                ),
            ))
        }
    };
    ProbabilityMap::new(h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn softmax_equal_logits_and_saturation() {
        let t = Tensor::full(Shape::new(1, 2, 3, 3), 1.7);
        assert!(softmax_to_map(&t, 0)
            .unwrap()
            .values()
            .iter()
            .all(|&p| p == 0.5));
        let mut t = Tensor::zeros(Shape::new(1, 2, 1, 1));
        t.set(0, 1, 0, 0, 20.0);
        assert!(softmax_to_map(&t, 0).unwrap().get(0, 0) >= 1.0 - 1e-8);
        let mut big = Tensor::zeros(Shape::new(1, 2, 1, 1));
        big.set(0, 0, 0, 0, 1000.0);
        assert_eq!(softmax_to_map(&big, 0).unwrap().get(0, 0), 0.0);
    }

    #[test]
    fn threshold_boundaries() {
        let m = ProbabilityMap::new(1, 3, vec![0.0, 0.5, 0.9]).unwrap();
        assert_eq!(threshold(&m, 0.0).count_ones(), 3);
        assert_eq!(threshold(&m, 0.9 + 1e-12).count_ones(), 0);
        assert!(threshold(&m, 0.5).get(0, 1));
    }

    fn ring(gap: bool) -> BinaryMask {
        let mut m = BinaryMask::from_fn(7, 7, |y, x| {
            (1..=5).contains(&y) && (1..=5).contains(&x) && (y == 1 || y == 5 || x == 1 || x == 5)
        });
        if gap {
            m.set(1, 3, false);
        }
        m
    }

    #[test]
    fn closed_ring_is_filled() {
        let filled = hole_fill(&ring(false));
        let expect = BinaryMask::from_fn(7, 7, |y, x| (1..=5).contains(&y) && (1..=5).contains(&x));
        assert_eq!(filled, expect);
    }

    #[test]
    fn open_ring_unchanged() {
        assert_eq!(hole_fill(&ring(true)), ring(true));
        assert_eq!(hole_fill(&BinaryMask::new(5, 5)).count_ones(), 0);
    }

    #[test]
    fn diagonal_gap_still_encloses_under_4_connectivity() {
        // A diamond of pixels touching only diagonally still seals its
        // interior from 4-connected background.
        let mut m = BinaryMask::new(5, 5);
        for (y, x) in [(1, 2), (2, 1), (2, 3), (3, 2)] {
            m.set(y, x, true);
        }
        assert!(hole_fill(&m).get(2, 2));
    }

    #[test]
    fn combine_absorbing_cases() {
        let surface = ProbabilityMap::from_fn(6, 6, |y, x| ((y * 6 + x) % 7) as f64 / 7.0).unwrap();
        let edge_hi = ProbabilityMap::new(6, 6, vec![0.9; 36]).unwrap();
        let edge_lo = ProbabilityMap::new(6, 6, vec![0.1; 36]).unwrap();
        assert_eq!(
            edge_enhanced_combine(&surface, &edge_hi, 0.5, 0.5).unwrap(),
            threshold(&surface, 0.5)
        );
        assert_eq!(
            edge_enhanced_combine(&surface, &edge_lo, 0.5, 0.5)
                .unwrap()
                .count_ones(),
            0
        );
        let small = ProbabilityMap::new(2, 2, vec![0.0; 4]).unwrap();
        assert!(edge_enhanced_combine(&surface, &small, 0.5, 0.5).is_err());
    }

    #[test]
    fn combine_tightens_oversized_surface_to_edge_ring() {
        // Surface: disk of radius 9; edge: clean ring of radius 6 (1 px thick).
        let (h, w) = (24, 24);
        let d = |y: usize, x: usize| ((y as f64 - 11.5).powi(2) + (x as f64 - 11.5).powi(2)).sqrt();
        let surface =
            ProbabilityMap::from_fn(h, w, |y, x| if d(y, x) <= 9.0 { 0.8 } else { 0.2 }).unwrap();
        let edge = ProbabilityMap::from_fn(h, w, |y, x| {
            if (d(y, x) - 6.0).abs() <= 0.75 {
                0.9
            } else {
                0.05
            }
        })
        .unwrap();
        let out = edge_enhanced_combine(&surface, &edge, 0.5, 0.5).unwrap();
        // Oracle: filled ring = every pixel within the ring's outer radius.
        let expect = BinaryMask::from_fn(h, w, |y, x| d(y, x) <= 6.75);
        assert_eq!(out, expect);
        assert!(out.count_ones() < threshold(&surface, 0.5).count_ones());
    }

    #[test]
    fn map_png_round_trip_quantizes_to_16_bits() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let m = ProbabilityMap::from_fn(5, 7, |y, x| (y * 7 + x) as f64 / 34.0).unwrap();
        save_probability_map(&m, &p).unwrap();
        let back = load_probability_map(&p).unwrap();
        assert_eq!((back.height(), back.width()), (5, 7));
        for (a, b) in m.values().iter().zip(back.values()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-12);
        }
    }
}
