use std::collections::BTreeMap;

use image::RgbImage;
use rayon::prelude::*;
use splice_mfcn::datagen::derive_seed;
use splice_mfcn::masks::load_mask;
use splice_mfcn::metrics::{optimal_threshold_sweep, EvalReport, EvalRow, Metric, SweepInput};
use splice_mfcn::model::load_checkpoint;
use splice_mfcn::perturb::{add_awgn, measure_snr, Perturbation};
use splice_mfcn::postprocess::ProbabilityMap;
use splice_mfcn::{BinaryMask, Model};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::io::{create_dir, input_images, load_rgb, predict, require_dir, MASKS_DIR};

pub const SNR_FILE: &str = "awgn_snr.csv";
pub const CONVENTIONS_FILE: &str = "conventions.txt";

/// Scores are only comparable between runs sharing these choices.
const CONVENTIONS: &str = "\
snr_signal_power = variance of all channel values of the clean image
snr_noise = i.i.d. gaussian per channel value, clamped to [0, 255] after addition
blur_kernel = sampled gaussian, radius ceil(3 sigma), normalized to sum 1, separable
blur_border = reflect-101
jpeg = baseline, 4:2:0, annex-k tables with ijg quality scaling
";
const NONE: &str = "none";

struct Method {
    name: &'static str,
    model: usize,
    edge_enhanced: bool,
}

fn mean_scores(
    cfg: &RunConfig,
    ids: &[String],
    maps: &[(ProbabilityMap, Option<ProbabilityMap>)],
    gt: &[BinaryMask],
    edge_enhanced: bool,
) -> Result<(f64, f64), CliError> {
    let inputs: Vec<SweepInput> = maps
        .iter()
        .zip(gt)
        .map(|((s, e), g)| SweepInput {
            surface: s,
            edge: if edge_enhanced { e.as_ref() } else { None },
            gt: g,
        })
        .collect();
    let mut out = [0.0; 2];
    for (slot, metric) in out.iter_mut().zip([Metric::F1, Metric::Mcc]) {
        let choices = optimal_threshold_sweep(&inputs, metric, &cfg.sweep_grid, cfg.sweep_mode)?;
        let rows = ids
            .iter()
            .zip(&choices)
            .map(|(id, c)| EvalRow::from_choice(id.clone(), c))
            .collect();
        let r = EvalReport::new(rows)?;
        *slot = match metric {
            Metric::F1 => r.mean_f1,
            Metric::Mcc => r.mean_mcc,
        };
    }
    Ok((out[0], out[1]))
}

/// Scores the configured models on the clean test corpus and on every
/// perturbed copy of it, writing one method × level table per perturbation
/// kind and metric.
pub fn cmd_perturb(cfg: &RunConfig) -> Result<(), CliError> {
    let dir = cfg.require("test_dir", &cfg.test_dir)?;
    require_dir("test_dir", dir)?;
    let mut models: Vec<Model> = Vec::new();
    let mut methods = Vec::new();
    for (key, ckpt) in [
        ("sfcn_checkpoint", &cfg.sfcn_checkpoint),
        ("mfcn_checkpoint", &cfg.mfcn_checkpoint),
    ] {
        let Some(p) = ckpt else { continue };
        if !p.is_file() {
            return Err(CliError::path(format!("{key}: {} not found", p.display())));
        }
        let m = load_checkpoint(p)?;
        let idx = models.len();
        if m.has_edge() {
            methods.push(Method {
                name: "MFCN",
                model: idx,
                edge_enhanced: false,
            });
            methods.push(Method {
                name: "MFCN-edge-enhanced",
                model: idx,
                edge_enhanced: true,
            });
        } else {
            methods.push(Method {
                name: "SFCN",
                model: idx,
                edge_enhanced: false,
            });
        }
        models.push(m);
    }
    if models.is_empty() {
        return Err(CliError::config(
            "perturb needs sfcn_checkpoint and/or mfcn_checkpoint",
        ));
    }
    let entries = input_images(dir)?;
    if entries.is_empty() {
        return Err(CliError::path(format!("no images under {}", dir.display())));
    }
    let ids: Vec<String> = entries.iter().map(|(id, _)| id.clone()).collect();
    let (images, gt): (Vec<RgbImage>, Vec<BinaryMask>) = entries
        .par_iter()
        .map(|(id, p)| {
            let img = load_rgb(p)?;
            let m = load_mask(
                dir.join(MASKS_DIR).join(format!("{id}.png")),
                cfg.mask_convention,
            )?;
            Ok((img, m))
        })
        .collect::<Result<Vec<_>, CliError>>()?
        .into_iter()
        .unzip();

    create_dir(&cfg.out)?;
    cfg.write_resolved(&cfg.out)?;
    let cp = cfg.out.join(CONVENTIONS_FILE);
    std::fs::write(&cp, CONVENTIONS).map_err(|e| CliError::io(&cp, e))?;

    let mut conditions: Vec<Option<Perturbation>> = vec![None];
    conditions.extend(cfg.perturbations.iter().copied().map(Some));
    // (method, condition label) → (mean F1, mean MCC)
    let mut scores: BTreeMap<(usize, String), (f64, f64)> = BTreeMap::new();
    let mut snr_rows = Vec::new();
    for cond in &conditions {
        let label = cond.map_or(NONE.to_string(), |p| p.to_string());
        let perturbed: Vec<RgbImage> = match cond {
            None => images.clone(),
            Some(Perturbation::Awgn { snr_db }) => {
                let noisy = images
                    .par_iter()
                    .enumerate()
                    .map(|(i, img)| {
                        let n = add_awgn(img, *snr_db, derive_seed(cfg.seed, i as u64))?;
                        let measured = measure_snr(img, &n.pre_clamp)?;
                        Ok((n.image, measured))
                    })
                    .collect::<Result<Vec<_>, CliError>>()?;
                noisy
                    .into_iter()
                    .enumerate()
                    .map(|(i, (img, measured))| {
                        snr_rows.push((ids[i].clone(), *snr_db, measured));
                        img
                    })
                    .collect()
            }
            Some(p) => images
                .par_iter()
                .map(|img| p.apply(img, 0).map_err(CliError::from))
                .collect::<Result<_, _>>()?,
        };
        if let (true, Some(p)) = (cfg.save_perturbed, cond) {
            let d = cfg
                .out
                .join("perturbed")
                .join(format!("{}-{}", p.kind(), p.level()));
            create_dir(&d)?;
            for (id, img) in ids.iter().zip(&perturbed) {
                let path = d.join(format!("{id}.png"));
                img.save_with_format(&path, image::ImageFormat::Png)
                    .map_err(|e| {
                        CliError::new(
                            crate::error::ErrorKind::Io,
                            format!("{}: {e}", path.display()),
                        )
                    })?;
            }
        }
        for (mi, model) in models.iter().enumerate() {
            let maps = perturbed
                .par_iter()
                .map(|img| predict(model, img))
                .collect::<Result<Vec<_>, _>>()?;
            for (k, m) in methods.iter().enumerate().filter(|(_, m)| m.model == mi) {
                let s = mean_scores(cfg, &ids, &maps, &gt, m.edge_enhanced)?;
                scores.insert((k, label.clone()), s);
            }
        }
        println!("scored condition {label}");
    }

    let mut kinds: Vec<&str> = Vec::new();
    for p in &cfg.perturbations {
        if !kinds.contains(&p.kind()) {
            kinds.push(p.kind());
        }
    }
    for kind in kinds {
        let levels: Vec<&Perturbation> = cfg
            .perturbations
            .iter()
            .filter(|p| p.kind() == kind)
            .collect();
        for metric in [Metric::F1, Metric::Mcc] {
            let path = cfg.out.join(format!("table_{kind}_{metric}.csv"));
            let mut w = csv::Writer::from_path(&path)?;
            let mut header = vec!["method".to_string(), NONE.to_string()];
            header.extend(levels.iter().map(|p| p.level().to_string()));
            w.write_record(&header)?;
            for (k, m) in methods.iter().enumerate() {
                let mut row = vec![m.name.to_string()];
                let labels =
                    std::iter::once(NONE.to_string()).chain(levels.iter().map(|p| p.to_string()));
                for label in labels {
                    let (f, c) = scores[&(k, label)];
                    row.push(
                        match metric {
                            Metric::F1 => f,
                            Metric::Mcc => c,
                        }
                        .to_string(),
                    );
                }
                w.write_record(&row)?;
            }
            w.flush().map_err(|e| CliError::io(&path, e))?;
        }
    }
    if !snr_rows.is_empty() {
        let path = cfg.out.join(SNR_FILE);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["image_id", "target_db", "measured_db"])?;
        for (id, target, measured) in snr_rows {
            w.write_record([id, target.to_string(), measured.to_string()])?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}
