//! Synthetic spliced images: a donor texture pasted into a host texture
//! inside a random ellipse or star polygon, with the exact surface mask.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::masks::{load_mask, save_mask, BinaryMask, MaskConvention};
use crate::morphology::{label_components, Connectivity};
use crate::postprocess::hole_fill;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RegionKind {
    Ellipse,
    Polygon,
    /// Ellipse or polygon with equal probability.
    #[default]
    Mixed,
}

impl FromStr for RegionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ellipse" => Ok(RegionKind::Ellipse),
            "polygon" => Ok(RegionKind::Polygon),
            "mixed" => Ok(RegionKind::Mixed),
            _ => Err(Error::Config(format!(
                "unknown region kind {s:?} (expected ellipse, polygon or mixed)"
            ))),
        }
    }
}

impl fmt::Display for RegionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegionKind::Ellipse => "ellipse",
            RegionKind::Polygon => "polygon",
            RegionKind::Mixed => "mixed",
        })
    }
}

/// Value-noise texture statistics: amplitude of the zero-mean noise and the
/// lattice spacing in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextureStats {
    pub amplitude: f64,
    pub correlation_length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenParams {
    pub height: usize,
    pub width: usize,
    pub region: RegionKind,
    pub area_range: (f64, f64),
    pub host: TextureStats,
    pub donor: TextureStats,
    /// Minimum Euclidean distance between the measured mean colours inside
    /// and outside the region.
    pub min_color_distance: f64,
    /// Average host and donor on the pixels either side of the boundary.
    pub blend: bool,
    pub max_retries: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            height: 64,
            width: 64,
            region: RegionKind::Mixed,
            area_range: (0.05, 0.30),
            host: TextureStats {
                amplitude: 30.0,
                correlation_length: 8.0,
            },
            donor: TextureStats {
                amplitude: 20.0,
                correlation_length: 3.0,
            },
            min_color_distance: 40.0,
            blend: false,
            max_retries: 200,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.area_range;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return Err(Error::Config(format!(
                "area range ({lo}, {hi}) must satisfy 0 < lo <= hi < 1"
            )));
        }
        if self.height < 8 || self.width < 8 {
            return Err(Error::Config(format!(
                "image size {}x{} is below the 8x8 minimum",
                self.height, self.width
            )));
        }
        for t in [self.host, self.donor] {
            if !(t.amplitude >= 0.0 && t.correlation_length >= 1.0) {
                return Err(Error::Config(
                    "texture amplitude must be >= 0 and correlation length >= 1".into(),
                ));
            }
        }
        if !(0.0..=200.0).contains(&self.min_color_distance) {
            return Err(Error::Config(format!(
                "min_color_distance {} outside [0, 200]",
                self.min_color_distance
            )));
        }
        if self.max_retries == 0 {
            return Err(Error::Config("max_retries must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: RgbImage,
    pub surface: BinaryMask,
}

impl Sample {
    pub fn area_fraction(&self) -> f64 {
        self.surface.count_ones() as f64 / self.surface.len() as f64
    }
}

/// Bilinear value noise with smoothstep weights, one independent field per
/// channel, values in [-1, 1].
fn value_noise(h: usize, w: usize, spacing: f64, rng: &mut impl Rng) -> Vec<f64> {
    let gh = (h as f64 / spacing).ceil() as usize + 2;
    let gw = (w as f64 / spacing).ceil() as usize + 2;
    let lattice: Vec<f64> = (0..gh * gw).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let fy = y as f64 / spacing;
        let (iy, ty) = (fy.floor() as usize, smooth(fy.fract()));
        for x in 0..w {
            let fx = x as f64 / spacing;
            let (ix, tx) = (fx.floor() as usize, smooth(fx.fract()));
            let at = |r: usize, c: usize| lattice[r * gw + c];
            let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
            let bottom = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

fn texture(
    h: usize,
    w: usize,
    base: [f64; 3],
    stats: TextureStats,
    rng: &mut impl Rng,
) -> [Vec<f64>; 3] {
    base.map(|b| {
        value_noise(h, w, stats.correlation_length, rng)
            .into_iter()
            .map(|v| b + stats.amplitude * v)
            .collect()
    })
}

fn ellipse(h: usize, w: usize, area: f64, rng: &mut impl Rng) -> BinaryMask {
    let aspect: f64 = rng.random_range(0.5..2.0);
    let ry = (area / (std::f64::consts::PI * aspect)).sqrt();
    let rx = ry * aspect;
    let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let reach = rx.max(ry);
    let cy = centre(h, reach, rng);
    let cx = centre(w, reach, rng);
    let (s, c) = theta.sin_cos();
    BinaryMask::from_fn(h, w, |y, x| {
        let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
    })
}

/// Star polygon: vertices at sorted random angles with radii in [0.5R, R].
fn polygon(h: usize, w: usize, area: f64, rng: &mut impl Rng) -> BinaryMask {
    let n = rng.random_range(3..=8);
    let tau = std::f64::consts::TAU;
    let offset: f64 = rng.random_range(0.0..tau);
    let verts_unit: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let jitter: f64 = rng.random_range(-0.3..0.3);
            let a = offset + (i as f64 + jitter) * tau / n as f64;
            let r: f64 = rng.random_range(0.5..=1.0);
            (r * a.sin(), r * a.cos())
        })
        .collect();
    // Shoelace area of the unit polygon sets the scale for the target area.
    let unit_area = (0..n)
        .map(|i| {
            let (y0, x0) = verts_unit[i];
            let (y1, x1) = verts_unit[(i + 1) % n];
            x0 * y1 - x1 * y0
        })
        .sum::<f64>()
        .abs()
        / 2.0;
    let scale = (area / unit_area.max(1e-9)).sqrt();
    let cy = centre(h, scale, rng);
    let cx = centre(w, scale, rng);
    let verts: Vec<(f64, f64)> = verts_unit
        .iter()
        .map(|&(y, x)| (cy + scale * y, cx + scale * x))
        .collect();
    BinaryMask::from_fn(h, w, |y, x| {
        point_in_polygon(y as f64 + 0.5, x as f64 + 0.5, &verts)
    })
}

fn centre(len: usize, reach: f64, rng: &mut impl Rng) -> f64 {
    let len = len as f64;
    if 2.0 * reach >= len {
        len / 2.0
    } else {
        rng.random_range(reach..=len - reach)
    }
}

/// Even-odd crossing test.
fn point_in_polygon(py: f64, px: f64, verts: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = verts.len() - 1;
    for i in 0..verts.len() {
        let (yi, xi) = verts[i];
        let (yj, xj) = verts[j];
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn single_simple_component(mask: &BinaryMask) -> bool {
    let (_, sizes) = label_components(mask, true, Connectivity::Eight);
    sizes.len() == 1 && hole_fill(mask) == *mask
}

fn mean_colors(planes: &[Vec<f64>; 3], mask: &BinaryMask) -> ([f64; 3], [f64; 3]) {
    let mut inside = [0.0; 3];
    let mut outside = [0.0; 3];
    let n_in = mask.count_ones() as f64;
    let n_out = mask.len() as f64 - n_in;
    for (c, plane) in planes.iter().enumerate() {
        for (&v, &m) in plane.iter().zip(mask.values()) {
            let q = v.round().clamp(0.0, 255.0);
            if m {
                inside[c] += q;
            } else {
                outside[c] += q;
            }
        }
        inside[c] /= n_in;
        outside[c] /= n_out;
    }
    (inside, outside)
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter()
        .zip(&b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Pixels of `mask` or its complement with a 4-neighbour on the other side.
fn boundary_band(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = (mask.height(), mask.width());
    BinaryMask::from_fn(h, w, |y, x| {
        let v = mask.get(y, x);
        (y > 0 && mask.get(y - 1, x) != v)
            || (y + 1 < h && mask.get(y + 1, x) != v)
            || (x > 0 && mask.get(y, x - 1) != v)
            || (x + 1 < w && mask.get(y, x + 1) != v)
    })
}

/// Deterministic per `seed`. Shapes violating the area range or
/// connectivity, and colour draws below the minimum distance, are resampled
/// up to `max_retries` times.
pub fn generate_sample(params: &GenParams, seed: u64) -> Result<Sample> {
    params.validate()?;
    let (h, w) = (params.height, params.width);
    let pixels = (h * w) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..params.max_retries {
        let target = rng.random_range(params.area_range.0..=params.area_range.1) * pixels;
        let use_ellipse = match params.region {
            RegionKind::Ellipse => true,
            RegionKind::Polygon => false,
            RegionKind::Mixed => rng.random_bool(0.5),
        };
        let mask = if use_ellipse {
            ellipse(h, w, target, &mut rng)
        } else {
            polygon(h, w, target, &mut rng)
        };
        let frac = mask.count_ones() as f64 / pixels;
        if !(params.area_range.0..=params.area_range.1).contains(&frac)
            || !single_simple_component(&mask)
        {
            continue;
        }

        let mut base = || [0; 3].map(|_| rng.random_range(40.0..=215.0));
        let host_base = base();
        let donor_base = base();
        if distance(host_base, donor_base) < params.min_color_distance {
            continue;
        }
        let host = texture(h, w, host_base, params.host, &mut rng);
        let donor = texture(h, w, donor_base, params.donor, &mut rng);
        let band = if params.blend {
            Some(boundary_band(&mask))
        } else {
            None
        };
        let planes: [Vec<f64>; 3] = std::array::from_fn(|c| {
            (0..h * w)
                .map(|i| {
                    let (hv, dv) = (host[c][i], donor[c][i]);
                    if band.as_ref().is_some_and(|b| b.values()[i]) {
                        (hv + dv) / 2.0
                    } else if mask.values()[i] {
                        dv
                    } else {
                        hv
                    }
                })
                .collect()
        });
        let (inside, outside) = mean_colors(&planes, &mask);
        if distance(inside, outside) < params.min_color_distance {
            continue;
        }
        let image = RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let i = y as usize * w + x as usize;
            Rgb(std::array::from_fn(|c| {
                planes[c][i].round().clamp(0.0, 255.0) as u8
            }))
        });
        return Ok(Sample {
            image,
            surface: mask,
        });
    }
    Err(Error::Generation(format!(
        "seed {seed}: no valid sample after {} attempts",
        params.max_retries
    )))
}

/// SplitMix64 finalizer over `root + counter · golden`.
pub fn derive_seed(root: u64, counter: u64) -> u64 {
    let mut z = root.wrapping_add(counter.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub id: String,
    pub seed: u64,
    pub area_fraction: f64,
}

pub const MANIFEST_FILE: &str = "manifest.csv";

pub fn image_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("images").join(format!("{id}.png"))
}

pub fn mask_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("masks").join(format!("{id}.png"))
}

/// Writes `images/ID.png`, `masks/ID.png` and `manifest.csv` under `out_dir`.
pub fn generate_corpus(
    n: usize,
    params: &GenParams,
    root_seed: u64,
    convention: MaskConvention,
    out_dir: &Path,
) -> Result<Vec<ManifestRow>> {
    if n == 0 {
        return Err(Error::invalid(
            "generate_corpus",
            "corpus size must be at least 1",
        ));
    }
    params.validate()?;
    for sub in ["images", "masks"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let rows: Vec<ManifestRow> = (0..n)
        .into_par_iter()
        .map(|i| {
            let id = format!("s{i:05}");
            let seed = derive_seed(root_seed, i as u64);
            let sample = generate_sample(params, seed)?;
            let ip = image_path(out_dir, &id);
            sample
                .image
                .save_with_format(&ip, image::ImageFormat::Png)
                .map_err(|e| Error::image(&ip, e))?;
            save_mask(&sample.surface, mask_path(out_dir, &id), convention)?;
            Ok(ManifestRow {
                id,
                seed,
                area_fraction: sample.area_fraction(),
            })
        })
        .collect::<Result<_>>()?;
    write_manifest(&out_dir.join(MANIFEST_FILE), &rows)?;
    Ok(rows)
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "seed", "area_fraction"])?;
    for r in rows {
        w.write_record([
            r.id.clone(),
            r.seed.to_string(),
            r.area_fraction.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut rd = csv::Reader::from_path(path)?;
    let header = rd.headers()?.clone();
    if header.iter().ne(["id", "seed", "area_fraction"]) {
        return Err(Error::invalid(
            "read_manifest",
            format!("{}: unexpected header {:?}", path.display(), header),
        ));
    }
    rd.records()
        .map(|rec| {
            let rec = rec?;
            let bad = |f: &str| Error::invalid("read_manifest", format!("bad {f} in {rec:?}"));
            Ok(ManifestRow {
                id: rec[0].to_string(),
                seed: rec[1].parse().map_err(|_| bad("seed"))?,
                area_fraction: rec[2].parse().map_err(|_| bad("area_fraction"))?,
            })
        })
        .collect()
}

/// Loads every sample listed in a corpus manifest, in manifest order.
pub fn load_corpus(dir: &Path, convention: MaskConvention) -> Result<Vec<(String, Sample)>> {
    read_manifest(&dir.join(MANIFEST_FILE))?
        .into_par_iter()
        .map(|row| {
            let ip = image_path(dir, &row.id);
            let image = image::open(&ip)
                .map_err(|e| Error::image(&ip, e))?
                .to_rgb8();
            let surface = load_mask(mask_path(dir, &row.id), convention)?;
            if (surface.height(), surface.width())
                != (image.height() as usize, image.width() as usize)
            {
                return Err(Error::shape(
                    "load_corpus",
                    format!("mask matching image {}", row.id),
                    format!("{}x{}", surface.height(), surface.width()),
                ));
            }
            Ok((row.id, Sample { image, surface }))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masks::derive_edge_label;

    #[test]
    fn samples_satisfy_postconditions() {
        let params = GenParams::default();
        for seed in 0..40 {
            let s = generate_sample(&params, seed).unwrap();
            let f = s.area_fraction();
            assert!((0.05..=0.30).contains(&f), "seed {seed}: fraction {f}");
            assert!(single_simple_component(&s.surface));
            assert!(derive_edge_label(&s.surface, 1).count_ones() > 0);
        }
    }

    #[test]
    fn same_seed_same_sample() {
        let p = GenParams::default();
        assert_eq!(
            generate_sample(&p, 9).unwrap(),
            generate_sample(&p, 9).unwrap()
        );
        assert_ne!(
            generate_sample(&p, 9).unwrap(),
            generate_sample(&p, 10).unwrap()
        );
    }

    #[test]
    fn kinds_and_blend() {
        for region in [RegionKind::Ellipse, RegionKind::Polygon] {
            let p = GenParams {
                region,
                blend: true,
                ..GenParams::default()
            };
            let s = generate_sample(&p, 3).unwrap();
            assert!(single_simple_component(&s.surface), "{region}");
        }
    }

    #[test]
    fn invalid_params() {
        let p = GenParams {
            area_range: (0.3, 0.1),
            ..GenParams::default()
        };
        assert!(generate_sample(&p, 0).is_err());
        // Unreachable colour distance exhausts the retry budget.
        let p = GenParams {
            min_color_distance: 200.0,
            max_retries: 5,
            ..GenParams::default()
        };
        assert!(matches!(generate_sample(&p, 0), Err(Error::Generation(_))));
    }

    #[test]
    fn polygon_point_test() {
        let square = [(0.0, 0.0), (0.0, 4.0), (4.0, 4.0), (4.0, 0.0)];
        assert!(point_in_polygon(2.0, 2.0, &square));
        assert!(!point_in_polygon(5.0, 2.0, &square));
    }

    #[test]
    fn derived_seeds_are_distinct() {
        let seeds: std::collections::BTreeSet<u64> = (0..1000).map(|i| derive_seed(7, i)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_ne!(derive_seed(7, 0), derive_seed(8, 0));
    }
}
