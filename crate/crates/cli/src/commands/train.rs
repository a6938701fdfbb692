use std::path::Path;

use image::imageops::{resize, FilterType};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use splice_mfcn::datagen::derive_seed;
use splice_mfcn::masks::{derive_edge_label, load_mask, median_freq_weights};
use splice_mfcn::model::{images_to_tensor, save_checkpoint, LossReport, Model, TrainBatch};
use splice_mfcn::{BinaryMask, ClassWeights};

use crate::config::{ResizePolicy, RunConfig, WeightMode};
use crate::error::{CliError, ErrorKind};
use crate::io::{create_dir, input_images, load_rgb, require_dir, MASKS_DIR};

pub const CHECKPOINT_FILE: &str = "model.mfcn";
pub const LOSS_LOG_FILE: &str = "loss.csv";
pub const WEIGHTS_FILE: &str = "class_weights.csv";
pub const LOSS_HEADER: [&str; 4] = ["step", "loss_total", "loss_surface", "loss_edge"];

/// Training images with their surface and edge labels at the model's input
/// size.
pub struct TrainSet {
    pub ids: Vec<String>,
    pub images: Vec<image::RgbImage>,
    pub surface: Vec<BinaryMask>,
    pub edge: Vec<BinaryMask>,
}

fn resize_mask(m: &BinaryMask, h: usize, w: usize) -> BinaryMask {
    let (sh, sw) = (m.height(), m.width());
    BinaryMask::from_fn(h, w, |y, x| m.get(y * sh / h, x * sw / w))
}

pub fn load_train_set(cfg: &RunConfig, dir: &Path) -> Result<TrainSet, CliError> {
    let policy = *cfg.require("resize_policy", &cfg.resize_policy)?;
    let (h, w) = (cfg.model.input_h, cfg.model.input_w);
    let entries = input_images(dir)?;
    if entries.is_empty() {
        return Err(CliError::path(format!(
            "no training images under {}",
            dir.display()
        )));
    }
    let loaded: Vec<_> = entries
        .par_iter()
        .map(|(id, ip)| {
            let mut img = load_rgb(ip)?;
            let mp = dir.join(MASKS_DIR).join(format!("{id}.png"));
            if !mp.is_file() {
                return Err(CliError::path(format!("missing mask {}", mp.display())));
            }
            let mut mask = load_mask(&mp, cfg.mask_convention)?;
            if (mask.height(), mask.width()) != (img.height() as usize, img.width() as usize) {
                return Err(CliError::new(
                    ErrorKind::Shape,
                    format!("mask of {id} does not match its image size"),
                ));
            }
            if (img.height() as usize, img.width() as usize) != (h, w) {
                match policy {
                    ResizePolicy::Reject => {
                        return Err(CliError::new(
                            ErrorKind::Shape,
                            format!(
                                "{id} is {}x{}, input_size is {h}x{w} (resize_policy = reject)",
                                img.height(),
                                img.width()
                            ),
                        ))
                    }
                    ResizePolicy::Resize => {
                        img = resize(&img, w as u32, h as u32, FilterType::Triangle);
                        mask = resize_mask(&mask, h, w);
                    }
                }
            }
            let edge = derive_edge_label(&mask, cfg.edge_halfwidth);
            Ok((id.clone(), img, mask, edge))
        })
        .collect::<Result<_, CliError>>()?;
    let mut set = TrainSet {
        ids: Vec::new(),
        images: Vec::new(),
        surface: Vec::new(),
        edge: Vec::new(),
    };
    for (id, img, s, e) in loaded {
        set.ids.push(id);
        set.images.push(img);
        set.surface.push(s);
        set.edge.push(e);
    }
    Ok(set)
}

pub fn class_weights(
    cfg: &RunConfig,
    set: &TrainSet,
) -> Result<(ClassWeights, ClassWeights), CliError> {
    Ok(match cfg.class_weights {
        WeightMode::Balanced => (ClassWeights::balanced(), ClassWeights::balanced()),
        WeightMode::MedianFrequency => (
            median_freq_weights(&set.surface)?,
            median_freq_weights(&set.edge)?,
        ),
    })
}

/// Index stream made of concatenated seeded permutations of `0..n`.
pub struct BatchSchedule {
    n: usize,
    rng: ChaCha8Rng,
    pending: Vec<usize>,
}

impl BatchSchedule {
    pub fn new(n: usize, seed: u64) -> Self {
        BatchSchedule {
            n,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX)),
            pending: Vec::new(),
        }
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        while self.pending.len() < size {
            let mut perm: Vec<usize> = (0..self.n).collect();
            perm.shuffle(&mut self.rng);
            // consumed from the back
            perm.reverse();
            perm.extend(std::mem::take(&mut self.pending));
            self.pending = perm;
        }
        (0..size)
            .map(|_| self.pending.pop().expect("refilled"))
            .collect()
    }
}

pub fn make_batch(set: &TrainSet, idx: &[usize], with_edge: bool) -> Result<TrainBatch, CliError> {
    let imgs: Vec<_> = idx.iter().map(|&i| &set.images[i]).collect();
    Ok(TrainBatch {
        images: images_to_tensor(&imgs)?,
        surface: idx.iter().map(|&i| set.surface[i].clone()).collect(),
        edge: with_edge.then(|| idx.iter().map(|&i| set.edge[i].clone()).collect()),
    })
}

pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<(usize, LossReport)>,
}

/// Trains from scratch, calling `on_step` after every update.
pub fn train(
    cfg: &RunConfig,
    set: &TrainSet,
    mut on_step: impl FnMut(usize, &LossReport, &Model),
) -> Result<TrainOutcome, CliError> {
    let steps = *cfg.require("steps", &cfg.steps)?;
    let batch_size = *cfg.require("batch_size", &cfg.batch_size)?;
    let (ws, we) = class_weights(cfg, set)?;
    let mut model = Model::build(cfg.model.clone(), cfg.seed)?;
    let with_edge = model.has_edge();
    let sgd = cfg.sgd();
    let mut schedule = BatchSchedule::new(set.images.len(), cfg.seed);
    let mut log = Vec::new();
    for step in 1..=steps {
        let batch = make_batch(set, &schedule.next_batch(batch_size), with_edge)?;
        let report = model.train_step(&batch, ws, we, &sgd)?;
        if !report.total.is_finite() {
            return Err(CliError::new(
                ErrorKind::Data,
                format!("loss diverged at step {step}"),
            ));
        }
        if step % cfg.log_every == 0 || step == steps {
            log.push((step, report));
        }
        on_step(step, &report, &model);
    }
    Ok(TrainOutcome { model, log })
}

pub fn write_loss_log(path: &Path, log: &[(usize, LossReport)]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(LOSS_HEADER)?;
    for (step, r) in log {
        w.write_record([
            step.to_string(),
            r.total.to_string(),
            r.surface.to_string(),
            r.edge.map(|e| e.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn cmd_train(cfg: &RunConfig) -> Result<(), CliError> {
    let dir = cfg.require("train_dir", &cfg.train_dir)?;
    require_dir("train_dir", dir)?;
    let set = load_train_set(cfg, dir)?;
    let (ws, we) = class_weights(cfg, &set)?;
    create_dir(&cfg.out)?;
    cfg.write_resolved(&cfg.out)?;

    let outcome = train(cfg, &set, |_, _, _| {})?;
    write_loss_log(&cfg.out.join(LOSS_LOG_FILE), &outcome.log)?;

    let wp = cfg.out.join(WEIGHTS_FILE);
    let mut w = csv::Writer::from_path(&wp)?;
    w.write_record(["head", "authentic", "spliced"])?;
    w.write_record([
        "surface".into(),
        ws.authentic.to_string(),
        ws.spliced.to_string(),
    ])?;
    if outcome.model.has_edge() {
        w.write_record([
            "edge".into(),
            we.authentic.to_string(),
            we.spliced.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(&wp, e))?;

    save_checkpoint(&outcome.model, cfg.out.join(CHECKPOINT_FILE))?;
    if let Some((step, r)) = outcome.log.last() {
        println!(
            "trained {} images for {step} steps; final loss {:.6}",
            set.images.len(),
            r.total
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_visits_every_sample_once_per_epoch() {
        let mut s = BatchSchedule::new(5, 3);
        let mut seen: Vec<usize> = (0..5).flat_map(|_| s.next_batch(2)).collect();
        seen.truncate(10);
        for epoch in seen.chunks(5) {
            let mut e = epoch.to_vec();
            e.sort();
            assert_eq!(e, vec![0, 1, 2, 3, 4]);
        }
        let mut a = BatchSchedule::new(7, 1);
        let mut b = BatchSchedule::new(7, 1);
        assert_eq!(a.next_batch(20), b.next_batch(20));
    }

    #[test]
    fn nearest_mask_resize() {
        let m = BinaryMask::from_fn(4, 4, |y, x| y < 2 && x < 2);
        let r = resize_mask(&m, 8, 2);
        assert_eq!(r.count_ones(), 4);
        assert!(r.get(3, 0) && !r.get(4, 0) && !r.get(0, 1));
    }
}
