//! Minimal baseline JPEG encoder: YCbCr 4:2:0, Annex-K quantization and
//! Huffman tables, IJG quality scaling. Decoding goes through `image`.

use image::RgbImage;

use crate::error::{Error, Result};

/// Annex-K luminance table, natural (row-major) order.
pub const BASE_LUMA: [u8; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Annex-K chrominance table, natural order.
pub const BASE_CHROMA: [u8; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// Natural index of the k-th coefficient in zigzag order.
const ZIGZAG: [usize; 64] = [
    0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5, 12, 19, 26, 33, 40, 48, 41, 34, 27, 20,
    13, 6, 7, 14, 21, 28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51, 58, 59,
    52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63,
];

const LUMA_DC_BITS: [u8; 16] = [0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0];
const LUMA_DC_VALS: [u8; 12] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11];
const CHROMA_DC_BITS: [u8; 16] = [0, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0];
const CHROMA_DC_VALS: [u8; 12] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11];
const LUMA_AC_BITS: [u8; 16] = [0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 0x7d];
const LUMA_AC_VALS: [u8; 162] = [
    0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12, 0x21, 0x31, 0x41, 0x06, 0x13, 0x51, 0x61, 0x07,
    0x22, 0x71, 0x14, 0x32, 0x81, 0x91, 0xA1, 0x08, 0x23, 0x42, 0xB1, 0xC1, 0x15, 0x52, 0xD1, 0xF0,
    0x24, 0x33, 0x62, 0x72, 0x82, 0x09, 0x0A, 0x16, 0x17, 0x18, 0x19, 0x1A, 0x25, 0x26, 0x27, 0x28,
    0x29, 0x2A, 0x34, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3A, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48, 0x49,
    0x4A, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5A, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69,
    0x6A, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7A, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89,
    0x8A, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9A, 0xA2, 0xA3, 0xA4, 0xA5, 0xA6, 0xA7,
    0xA8, 0xA9, 0xAA, 0xB2, 0xB3, 0xB4, 0xB5, 0xB6, 0xB7, 0xB8, 0xB9, 0xBA, 0xC2, 0xC3, 0xC4, 0xC5,
    0xC6, 0xC7, 0xC8, 0xC9, 0xCA, 0xD2, 0xD3, 0xD4, 0xD5, 0xD6, 0xD7, 0xD8, 0xD9, 0xDA, 0xE1, 0xE2,
    0xE3, 0xE4, 0xE5, 0xE6, 0xE7, 0xE8, 0xE9, 0xEA, 0xF1, 0xF2, 0xF3, 0xF4, 0xF5, 0xF6, 0xF7, 0xF8,
    0xF9, 0xFA,
];
const CHROMA_AC_BITS: [u8; 16] = [0, 2, 1, 2, 4, 4, 3, 4, 7, 5, 4, 4, 0, 1, 2, 0x77];
const CHROMA_AC_VALS: [u8; 162] = [
    0x00, 0x01, 0x02, 0x03, 0x11, 0x04, 0x05, 0x21, 0x31, 0x06, 0x12, 0x41, 0x51, 0x07, 0x61, 0x71,
    0x13, 0x22, 0x32, 0x81, 0x08, 0x14, 0x42, 0x91, 0xA1, 0xB1, 0xC1, 0x09, 0x23, 0x33, 0x52, 0xF0,
    0x15, 0x62, 0x72, 0xD1, 0x0A, 0x16, 0x24, 0x34, 0xE1, 0x25, 0xF1, 0x17, 0x18, 0x19, 0x1A, 0x26,
    0x27, 0x28, 0x29, 0x2A, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3A, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48,
    0x49, 0x4A, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5A, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68,
    0x69, 0x6A, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7A, 0x82, 0x83, 0x84, 0x85, 0x86, 0x87,
    0x88, 0x89, 0x8A, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9A, 0xA2, 0xA3, 0xA4, 0xA5,
    0xA6, 0xA7, 0xA8, 0xA9, 0xAA, 0xB2, 0xB3, 0xB4, 0xB5, 0xB6, 0xB7, 0xB8, 0xB9, 0xBA, 0xC2, 0xC3,
    0xC4, 0xC5, 0xC6, 0xC7, 0xC8, 0xC9, 0xCA, 0xD2, 0xD3, 0xD4, 0xD5, 0xD6, 0xD7, 0xD8, 0xD9, 0xDA,
    0xE2, 0xE3, 0xE4, 0xE5, 0xE6, 0xE7, 0xE8, 0xE9, 0xEA, 0xF2, 0xF3, 0xF4, 0xF5, 0xF6, 0xF7, 0xF8,
    0xF9, 0xFA,
];

fn check_quality(quality: u8) -> Result<()> {
    if !(1..=100).contains(&quality) {
        return Err(Error::invalid(
            "jpeg",
            format!("quality {quality} outside 1..=100"),
        ));
    }
    Ok(())
}

/// IJG scale factor S in percent.
pub fn quality_scale(quality: u8) -> Result<u32> {
    check_quality(quality)?;
    let q = u32::from(quality);
    Ok(if q < 50 { 5000 / q } else { 200 - 2 * q })
}

pub fn scale_table(base: &[u8; 64], quality: u8) -> Result<[u8; 64]> {
    let s = quality_scale(quality)?;
    Ok(base.map(|e| ((u32::from(e) * s + 50) / 100).clamp(1, 255) as u8))
}

struct Huffman {
    code: [u16; 256],
    len: [u8; 256],
}

impl Huffman {
    fn new(bits: &[u8; 16], vals: &[u8]) -> Self {
        let mut h = Huffman {
            code: [0; 256],
            len: [0; 256],
        };
        let mut code = 0u16;
        let mut k = 0;
        for (l, &count) in bits.iter().enumerate() {
            for _ in 0..count {
                h.code[vals[k] as usize] = code;
                h.len[vals[k] as usize] = l as u8 + 1;
                code += 1;
                k += 1;
            }
            code <<= 1;
        }
        h
    }
}

struct BitWriter {
    out: Vec<u8>,
    acc: u32,
    n: u32,
}

impl BitWriter {
    fn put(&mut self, bits: u16, len: u8) {
        for i in (0..len).rev() {
            self.acc = (self.acc << 1) | u32::from((bits >> i) & 1);
            self.n += 1;
            if self.n == 8 {
                let b = self.acc as u8;
                self.out.push(b);
                if b == 0xFF {
                    self.out.push(0);
                }
                self.acc = 0;
                self.n = 0;
            }
        }
    }

    fn finish(mut self) -> Vec<u8> {
        while self.n != 0 {
            self.put(1, 1);
        }
        self.out
    }
}

/// Magnitude category and appended bits of a coefficient.
fn category(v: i32) -> (u8, u16) {
    let cat = (32 - v.unsigned_abs().leading_zeros()) as u8;
    let bits = if v >= 0 { v } else { v + (1 << cat) - 1 };
    (cat, bits as u16)
}

struct Tables {
    dct: [[f64; 8]; 8],
}

impl Tables {
    fn new() -> Self {
        let mut dct = [[0.0; 8]; 8];
        for (u, row) in dct.iter_mut().enumerate() {
            let c = if u == 0 { (0.125f64).sqrt() } else { 0.5 };
            for (x, v) in row.iter_mut().enumerate() {
                *v = c * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos();
            }
        }
        Tables { dct }
    }

    /// Orthonormal 2-D DCT-II of a level-shifted 8×8 block.
    fn fdct(&self, block: &[f64; 64]) -> [f64; 64] {
        let mut tmp = [0.0; 64];
        for y in 0..8 {
            for u in 0..8 {
                tmp[y * 8 + u] = (0..8).map(|x| self.dct[u][x] * block[y * 8 + x]).sum();
            }
        }
        let mut out = [0.0; 64];
        for v in 0..8 {
            for u in 0..8 {
                out[v * 8 + u] = (0..8).map(|y| self.dct[v][y] * tmp[y * 8 + u]).sum();
            }
        }
        out
    }
}

struct Component<'a> {
    quant: [u8; 64],
    dc: &'a Huffman,
    ac: &'a Huffman,
    pred: i32,
}

fn encode_block(w: &mut BitWriter, tables: &Tables, block: &[f64; 64], comp: &mut Component) {
    let coef = tables.fdct(block);
    let q: Vec<i32> = ZIGZAG
        .iter()
        .map(|&i| (coef[i] / f64::from(comp.quant[i])).round() as i32)
        .collect();
    let (cat, bits) = category(q[0] - comp.pred);
    comp.pred = q[0];
    w.put(comp.dc.code[cat as usize], comp.dc.len[cat as usize]);
    w.put(bits, cat);
    let mut run = 0;
    for &v in &q[1..] {
        let v = v.clamp(-1023, 1023);
        if v == 0 {
            run += 1;
            continue;
        }
        while run >= 16 {
            w.put(comp.ac.code[0xF0], comp.ac.len[0xF0]);
            run -= 16;
        }
        let (cat, bits) = category(v);
        let sym = (run << 4 | cat as usize) & 0xFF;
        w.put(comp.ac.code[sym], comp.ac.len[sym]);
        w.put(bits, cat);
        run = 0;
    }
    if run > 0 {
        w.put(comp.ac.code[0], comp.ac.len[0]);
    }
}

fn segment(out: &mut Vec<u8>, marker: u8, body: &[u8]) {
    out.extend_from_slice(&[0xFF, marker]);
    out.extend_from_slice(&((body.len() + 2) as u16).to_be_bytes());
    out.extend_from_slice(body);
}

/// Encodes `img` as a baseline JFIF stream.
pub fn encode_jpeg(img: &RgbImage, quality: u8) -> Result<Vec<u8>> {
    let luma_q = scale_table(&BASE_LUMA, quality)?;
    let chroma_q = scale_table(&BASE_CHROMA, quality)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 || w > 65535 || h > 65535 {
        return Err(Error::invalid("jpeg", format!("unsupported size {w}x{h}")));
    }

    let mut out = vec![0xFF, 0xD8];
    segment(&mut out, 0xE0, b"JFIF\0\x01\x01\0\0\x01\0\x01\0\0");
    for (id, table) in [(0u8, &luma_q), (1, &chroma_q)] {
        let mut body = vec![id];
        body.extend(ZIGZAG.iter().map(|&i| table[i]));
        segment(&mut out, 0xDB, &body);
    }
    let mut sof = vec![8];
    sof.extend_from_slice(&(h as u16).to_be_bytes());
    sof.extend_from_slice(&(w as u16).to_be_bytes());
    sof.extend_from_slice(&[3, 1, 0x22, 0, 2, 0x11, 1, 3, 0x11, 1]);
    segment(&mut out, 0xC0, &sof);
    for (class_id, bits, vals) in [
        (0x00u8, &LUMA_DC_BITS, &LUMA_DC_VALS[..]),
        (0x10, &LUMA_AC_BITS, &LUMA_AC_VALS[..]),
        (0x01, &CHROMA_DC_BITS, &CHROMA_DC_VALS[..]),
        (0x11, &CHROMA_AC_BITS, &CHROMA_AC_VALS[..]),
    ] {
        let mut body = vec![class_id];
        body.extend_from_slice(bits);
        body.extend_from_slice(vals);
        segment(&mut out, 0xC4, &body);
    }
    segment(&mut out, 0xDA, &[3, 1, 0x00, 2, 0x11, 3, 0x11, 0, 63, 0]);

    // Planes padded to whole MCUs by edge replication.
    let (pw, ph) = (w.div_ceil(16) * 16, h.div_ceil(16) * 16);
    let mut planes = [vec![0.0; pw * ph], vec![0.0; pw * ph], vec![0.0; pw * ph]];
    for y in 0..ph {
        for x in 0..pw {
            let p = img.get_pixel(x.min(w - 1) as u32, y.min(h - 1) as u32).0;
            let (r, g, b) = (f64::from(p[0]), f64::from(p[1]), f64::from(p[2]));
            let i = y * pw + x;
            planes[0][i] = 0.299 * r + 0.587 * g + 0.114 * b - 128.0;
            planes[1][i] = -0.168736 * r - 0.331264 * g + 0.5 * b;
            planes[2][i] = 0.5 * r - 0.418688 * g - 0.081312 * b;
        }
    }

    let tables = Tables::new();
    let (luma_dc, luma_ac) = (
        Huffman::new(&LUMA_DC_BITS, &LUMA_DC_VALS),
        Huffman::new(&LUMA_AC_BITS, &LUMA_AC_VALS),
    );
    let (chroma_dc, chroma_ac) = (
        Huffman::new(&CHROMA_DC_BITS, &CHROMA_DC_VALS),
        Huffman::new(&CHROMA_AC_BITS, &CHROMA_AC_VALS),
    );
    let mut comps = [
        Component {
            quant: luma_q,
            dc: &luma_dc,
            ac: &luma_ac,
            pred: 0,
        },
        Component {
            quant: chroma_q,
            dc: &chroma_dc,
            ac: &chroma_ac,
            pred: 0,
        },
        Component {
            quant: chroma_q,
            dc: &chroma_dc,
            ac: &chroma_ac,
            pred: 0,
        },
    ];
    let mut bw = BitWriter {
        out: Vec::new(),
        acc: 0,
        n: 0,
    };
    let mut block = [0.0; 64];
    for my in (0..ph).step_by(16) {
        for mx in (0..pw).step_by(16) {
            for (by, bx) in [(0, 0), (0, 8), (8, 0), (8, 8)] {
                for y in 0..8 {
                    for x in 0..8 {
                        block[y * 8 + x] = planes[0][(my + by + y) * pw + mx + bx + x];
                    }
                }
                encode_block(&mut bw, &tables, &block, &mut comps[0]);
            }
            for c in 1..3 {
                for y in 0..8 {
                    for x in 0..8 {
                        let (sy, sx) = (my + 2 * y, mx + 2 * x);
                        let p = &planes[c];
                        block[y * 8 + x] = (p[sy * pw + sx]
                            + p[sy * pw + sx + 1]
                            + p[(sy + 1) * pw + sx]
                            + p[(sy + 1) * pw + sx + 1])
                            / 4.0;
                    }
                }
                encode_block(&mut bw, &tables, &block, &mut comps[c]);
            }
        }
    }
    out.extend(bw.finish());
    out.extend_from_slice(&[0xFF, 0xD9]);
    Ok(out)
}

/// Encode at `quality`, then decode back to RGB.
pub fn jpeg_recompress(img: &RgbImage, quality: u8) -> Result<RgbImage> {
    let bytes = encode_jpeg(img, quality)?;
    let decoded = image::load_from_memory_with_format(&bytes, image::ImageFormat::Jpeg)
        .map_err(|e| Error::image("<jpeg stream>", e))?;
    Ok(decoded.to_rgb8())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quality_scaling() {
        assert_eq!(scale_table(&BASE_LUMA, 50).unwrap(), BASE_LUMA);
        assert_eq!(scale_table(&BASE_CHROMA, 50).unwrap(), BASE_CHROMA);
        assert_eq!(quality_scale(70).unwrap(), 60);
        assert_eq!(quality_scale(10).unwrap(), 500);
        // floor((16*60 + 50)/100) = 10
        assert_eq!(scale_table(&BASE_LUMA, 70).unwrap()[0], 10);
        assert_eq!(scale_table(&BASE_LUMA, 100).unwrap(), [1; 64]);
        assert_eq!(scale_table(&BASE_CHROMA, 1).unwrap()[0], 255);
        assert!(quality_scale(0).is_err());
        assert!(quality_scale(101).is_err());
    }

    #[test]
    fn category_bits() {
        assert_eq!(category(0), (0, 0));
        assert_eq!(category(1), (1, 1));
        assert_eq!(category(-1), (1, 0));
        assert_eq!(category(-3), (2, 0));
        assert_eq!(category(5), (3, 5));
        assert_eq!(category(-1023), (10, 0));
    }

    #[test]
    fn huffman_codes_are_canonical() {
        let h = Huffman::new(&LUMA_DC_BITS, &LUMA_DC_VALS);
        assert_eq!((h.code[0], h.len[0]), (0b00, 2));
        assert_eq!((h.code[1], h.len[1]), (0b010, 3));
        assert_eq!((h.code[6], h.len[6]), (0b1110, 4));
        assert_eq!((h.code[11], h.len[11]), (0b1_1111_1110, 9));
    }

    #[test]
    fn dct_of_constant_block_is_dc_only() {
        let t = Tables::new();
        let c = t.fdct(&[10.0; 64]);
        assert!((c[0] - 80.0).abs() < 1e-9);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn constant_images_survive_high_quality() {
        // The bound does not hold at low quality, where the chroma DC step
        // is coarse.
        for q in [75, 85, 95, 100] {
            for c in [[0u8, 0, 0], [255, 255, 255], [200, 30, 90], [17, 140, 250]] {
                let img = RgbImage::from_pixel(19, 13, image::Rgb(c));
                let out = jpeg_recompress(&img, q).unwrap();
                for p in out.pixels() {
                    for k in 0..3 {
                        let d = (i32::from(p[k]) - i32::from(c[k])).abs();
                        assert!(d <= 2, "q{q} {c:?} -> {:?}", p.0);
                    }
                }
            }
        }
    }

    #[test]
    fn odd_sized_gradient_round_trip() {
        let img = RgbImage::from_fn(37, 21, |x, y| {
            image::Rgb([(x * 6) as u8, (y * 11) as u8, ((x + y) * 3) as u8])
        });
        let out = jpeg_recompress(&img, 95).unwrap();
        assert_eq!(out.dimensions(), img.dimensions());
        let mean_err: f64 = img
            .as_raw()
            .iter()
            .zip(out.as_raw())
            .map(|(&a, &b)| (f64::from(a) - f64::from(b)).abs())
            .sum::<f64>()
            / img.as_raw().len() as f64;
        assert!(mean_err < 3.0, "mean abs error {mean_err}");
        assert_eq!(
            encode_jpeg(&img, 70).unwrap(),
            encode_jpeg(&img, 70).unwrap()
        );
    }
}
