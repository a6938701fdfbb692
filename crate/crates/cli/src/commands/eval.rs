use std::path::{Path, PathBuf};

use rayon::prelude::*;
use splice_mfcn::masks::load_mask;
use splice_mfcn::metrics::{optimal_threshold_sweep, EvalReport, EvalRow, Metric, SweepInput};
use splice_mfcn::postprocess::{load_probability_map, ProbabilityMap};
use splice_mfcn::BinaryMask;

use crate::config::{EvalMethod, MethodKind, RunConfig};
use crate::error::CliError;
use crate::io::{create_dir, gt_masks, require_dir, EDGE_DIR, MASKS_DIR, SURFACE_DIR};

pub const EVAL_SUMMARY_FILE: &str = "summary.csv";
pub const SUMMARY_HEADER: [&str; 7] = [
    "method",
    "kind",
    "metric",
    "sweep_mode",
    "images",
    "mean_f1",
    "mean_mcc",
];

/// `dir/sub` when it exists, else `dir`.
fn subdir(dir: &Path, sub: &str) -> PathBuf {
    let p = dir.join(sub);
    if p.is_dir() {
        p
    } else {
        dir.to_path_buf()
    }
}

fn existing(p: PathBuf) -> Result<PathBuf, CliError> {
    if p.is_file() {
        Ok(p)
    } else {
        Err(CliError::path(format!("missing {}", p.display())))
    }
}

struct Loaded {
    surface: ProbabilityMap,
    edge: Option<ProbabilityMap>,
}

fn load_method(
    cfg: &RunConfig,
    method: &EvalMethod,
    ids: &[String],
) -> Result<Vec<Loaded>, CliError> {
    require_dir(&format!("method.{}", method.name), &method.dir)?;
    ids.par_iter()
        .map(|id| {
            let name = format!("{id}.png");
            Ok(match method.kind {
                MethodKind::Surface => Loaded {
                    surface: load_probability_map(existing(
                        subdir(&method.dir, SURFACE_DIR).join(&name),
                    )?)?,
                    edge: None,
                },
                MethodKind::EdgeEnhanced => Loaded {
                    surface: load_probability_map(existing(
                        method.dir.join(SURFACE_DIR).join(&name),
                    )?)?,
                    edge: Some(load_probability_map(existing(
                        method.dir.join(EDGE_DIR).join(&name),
                    )?)?),
                },
                MethodKind::Mask => {
                    let m = load_mask(
                        existing(subdir(&method.dir, MASKS_DIR).join(&name))?,
                        cfg.mask_convention,
                    )?;
                    let data = m.values().iter().map(|&b| f64::from(u8::from(b))).collect();
                    Loaded {
                        surface: ProbabilityMap::new(m.height(), m.width(), data)?,
                        edge: None,
                    }
                }
            })
        })
        .collect()
}

/// Scores every configured method against the ground truth, for each metric
/// with its own threshold sweep.
pub fn cmd_eval(cfg: &RunConfig) -> Result<(), CliError> {
    let gt_dir = cfg.require("gt_dir", &cfg.gt_dir)?;
    require_dir("gt_dir", gt_dir)?;
    if cfg.methods.is_empty() {
        return Err(CliError::config(
            "eval needs at least one method.NAME = KIND:DIR entry",
        ));
    }
    let gt_files = gt_masks(gt_dir)?;
    if gt_files.is_empty() {
        return Err(CliError::path(format!(
            "no ground-truth masks under {}",
            gt_dir.display()
        )));
    }
    let ids: Vec<String> = gt_files.iter().map(|(id, _)| id.clone()).collect();
    let gt: Vec<BinaryMask> = gt_files
        .par_iter()
        .map(|(_, p)| load_mask(p, cfg.mask_convention).map_err(CliError::from))
        .collect::<Result<_, _>>()?;

    create_dir(&cfg.out)?;
    cfg.write_resolved(&cfg.out)?;
    let sp = cfg.out.join(EVAL_SUMMARY_FILE);
    let mut summary = csv::Writer::from_path(&sp)?;
    summary.write_record(SUMMARY_HEADER)?;
    for method in &cfg.methods {
        let loaded = load_method(cfg, method, &ids)?;
        let inputs: Vec<SweepInput> = loaded
            .iter()
            .zip(&gt)
            .map(|(l, g)| SweepInput {
                surface: &l.surface,
                edge: l.edge.as_ref(),
                gt: g,
            })
            .collect();
        for metric in [Metric::F1, Metric::Mcc] {
            let choices =
                optimal_threshold_sweep(&inputs, metric, &cfg.sweep_grid, cfg.sweep_mode)?;
            let rows = ids
                .iter()
                .zip(&choices)
                .map(|(id, c)| EvalRow::from_choice(id.clone(), c))
                .collect();
            let report = EvalReport::new(rows)?;
            let rp = cfg.out.join(format!("eval_{}_{metric}.csv", method.name));
            let file = std::fs::File::create(&rp).map_err(|e| CliError::io(&rp, e))?;
            report.write_csv(std::io::BufWriter::new(file))?;
            summary.write_record([
                method.name.clone(),
                method.kind.to_string(),
                metric.to_string(),
                cfg.sweep_mode.to_string(),
                ids.len().to_string(),
                report.mean_f1.to_string(),
                report.mean_mcc.to_string(),
            ])?;
            println!(
                "{} ({metric}-optimal): mean F1 {:.4}, mean MCC {:.4}",
                method.name, report.mean_f1, report.mean_mcc
            );
        }
    }
    summary.flush().map_err(|e| CliError::io(&sp, e))
}
