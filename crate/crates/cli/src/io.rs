//! Directory conventions shared by the commands.

use std::path::{Path, PathBuf};

use image::RgbImage;
use splice_mfcn::datagen::{read_manifest, MANIFEST_FILE};
use splice_mfcn::model::{images_to_tensor, Model, STRIDE};
use splice_mfcn::postprocess::{softmax_to_map, ProbabilityMap};

use crate::error::{CliError, ErrorKind};

pub const SURFACE_DIR: &str = "surface";
pub const EDGE_DIR: &str = "edge";
pub const MASKS_DIR: &str = "masks";
pub const IMAGES_DIR: &str = "images";

const IMAGE_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "bmp", "tif"];

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn require_dir(key: &str, dir: &Path) -> Result<(), CliError> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(CliError::path(format!(
            "{key}: {} is not a directory",
            dir.display()
        )))
    }
}

/// `(id, path)` for every image file directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<(String, PathBuf)>, CliError> {
    let rd = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| CliError::io(dir, e))?.path();
        let ext = p
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if p.is_file() && ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            let id = p
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| CliError::path(format!("non-UTF-8 file name {}", p.display())))?
                .to_string();
            out.push((id, p));
        }
    }
    out.sort();
    if let Some(w) = out.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(CliError::new(
            ErrorKind::Data,
            format!("two images share the id {:?} in {}", w[0].0, dir.display()),
        ));
    }
    Ok(out)
}

/// Input images of a directory: a generated corpus in manifest order, else
/// every image file in its `images/` subdirectory or in the directory itself.
pub fn input_images(dir: &Path) -> Result<Vec<(String, PathBuf)>, CliError> {
    let manifest = dir.join(MANIFEST_FILE);
    if manifest.is_file() {
        Ok(read_manifest(&manifest)?
            .into_iter()
            .map(|r| {
                let p = dir.join(IMAGES_DIR).join(format!("{}.png", r.id));
                (r.id, p)
            })
            .collect())
    } else {
        let sub = dir.join(IMAGES_DIR);
        list_images(if sub.is_dir() { &sub } else { dir })
    }
}

/// Ground-truth mask files: `masks/` of a corpus, else the directory itself.
pub fn gt_masks(dir: &Path) -> Result<Vec<(String, PathBuf)>, CliError> {
    let sub = dir.join(MASKS_DIR);
    list_images(if sub.is_dir() { &sub } else { dir })
}

pub fn load_rgb(path: &Path) -> Result<RgbImage, CliError> {
    if !path.is_file() {
        return Err(CliError::path(format!("missing image {}", path.display())));
    }
    image::open(path)
        .map(|i| i.to_rgb8())
        .map_err(|e| CliError::new(ErrorKind::Data, format!("{}: {e}", path.display())))
}

/// Edge-replicates `img` up to the next multiple of the network stride.
pub fn pad_to_stride(img: &RgbImage) -> RgbImage {
    let (w, h) = img.dimensions();
    let up = |v: u32| v.div_ceil(STRIDE as u32).max(1) * STRIDE as u32;
    RgbImage::from_fn(up(w), up(h), |x, y| {
        *img.get_pixel(x.min(w - 1), y.min(h - 1))
    })
}

/// Surface and (for the multi-task model) edge probability maps of one image
/// of any size.
pub fn predict(
    model: &Model,
    img: &RgbImage,
) -> Result<(ProbabilityMap, Option<ProbabilityMap>), CliError> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let padded = pad_to_stride(img);
    let out = model.infer(&images_to_tensor(&[&padded])?)?;
    let surface = softmax_to_map(&out.surface, 0)?.crop(h, w)?;
    let edge = match &out.edge {
        Some(e) => Some(softmax_to_map(e, 0)?.crop(h, w)?),
        None => None,
    };
    Ok((surface, edge))
}
