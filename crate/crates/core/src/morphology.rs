//! Binary morphology on [`BinaryMask`]es with square structuring elements.
//! Pixels outside the image never influence a result.

use std::collections::VecDeque;

use crate::masks::BinaryMask;

/// Dilation by a (2·radius+1)² square.
pub fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    // Separable: horizontal max then vertical max.
    let (h, w) = (mask.height(), mask.width());
    let src = mask.values();
    let mut tmp = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(w - 1);
            tmp[y * w + x] = src[y * w + lo..=y * w + hi].iter().any(|&v| v);
        }
    }
    let mut out = vec![false; h * w];
    for y in 0..h {
        let lo = y.saturating_sub(radius);
        let hi = (y + radius).min(h - 1);
        for x in 0..w {
            out[y * w + x] = (lo..=hi).any(|yy| tmp[yy * w + x]);
        }
    }
    BinaryMask::from_values(h, w, out).expect("dimensions preserved")
}

/// Erosion by a (2·radius+1)² square; out-of-image pixels are ignored rather
/// than treated as background, so regions touching the border keep it.
pub fn erode(mask: &BinaryMask, radius: usize) -> BinaryMask {
    dilate(&mask.complement(), radius).complement()
}

pub fn close(mask: &BinaryMask, radius: usize, iterations: usize) -> BinaryMask {
    let mut m = mask.clone();
    for _ in 0..iterations {
        m = dilate(&m, radius);
    }
    for _ in 0..iterations {
        m = erode(&m, radius);
    }
    m
}

pub fn open(mask: &BinaryMask, radius: usize, iterations: usize) -> BinaryMask {
    let mut m = mask.clone();
    for _ in 0..iterations {
        m = erode(&m, radius);
    }
    for _ in 0..iterations {
        m = dilate(&m, radius);
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
            Connectivity::Eight => &[
                (-1, -1),
                (-1, 0),
                (-1, 1),
                (0, -1),
                (0, 1),
                (1, -1),
                (1, 0),
                (1, 1),
            ],
        }
    }
}

/// Connected components of the pixels equal to `value`. Returns a label per
/// pixel (`usize::MAX` for other pixels) and the size of each component,
/// numbered in raster order of their first pixel.
pub fn label_components(
    mask: &BinaryMask,
    value: bool,
    conn: Connectivity,
) -> (Vec<usize>, Vec<usize>) {
    let (h, w) = (mask.height(), mask.width());
    let src = mask.values();
    let mut labels = vec![usize::MAX; h * w];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if src[start] != value || labels[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        labels[start] = id;
        queue.push_back(start);
        let mut size = 0;
        while let Some(p) = queue.pop_front() {
            size += 1;
            let (y, x) = ((p / w) as isize, (p % w) as isize);
            for &(dy, dx) in conn.offsets() {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let q = ny as usize * w + nx as usize;
                if src[q] == value && labels[q] == usize::MAX {
                    labels[q] = id;
                    queue.push_back(q);
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Drops 8-connected foreground components smaller than `min_area` pixels.
pub fn remove_small_components(mask: &BinaryMask, min_area: usize) -> BinaryMask {
    let (labels, sizes) = label_components(mask, true, Connectivity::Eight);
    let values = labels
        .iter()
        .map(|&l| l != usize::MAX && sizes[l] >= min_area)
        .collect();
    BinaryMask::from_values(mask.height(), mask.width(), values).expect("dimensions preserved")
}
