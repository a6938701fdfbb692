//! Per-pixel F1 / MCC, optimal-threshold sweeps and dataset reports.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::masks::BinaryMask;
use crate::postprocess::{hole_fill, threshold, ProbabilityMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(out: &BinaryMask, gt: &BinaryMask) -> Result<ConfusionCounts> {
    if (out.height(), out.width()) != (gt.height(), gt.width()) {
        return Err(Error::shape(
            "confusion",
            format!("{}x{}", gt.height(), gt.width()),
            format!("{}x{}", out.height(), out.width()),
        ));
    }
    let mut c = ConfusionCounts::default();
    for (&o, &g) in out.values().iter().zip(gt.values()) {
        match (o, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// `2tp / (2tp + fn + fp)`; 1 when both masks are empty.
pub fn f1(c: &ConfusionCounts) -> f64 {
    let denom = 2 * c.tp + c.fn_ + c.fp;
    if denom == 0 {
        return 1.0;
    }
    (2 * c.tp) as f64 / denom as f64
}

/// Matthews correlation. A zero factor in the denominator gives 0, except a
/// perfect match against an empty ground truth, which gives 1.
pub fn mcc(c: &ConfusionCounts) -> f64 {
    let factors = [c.tp + c.fp, c.tp + c.fn_, c.tn + c.fp, c.tn + c.fn_];
    if factors.contains(&0) {
        let perfect_empty = c.tp == 0 && c.fp == 0 && c.fn_ == 0;
        return if perfect_empty { 1.0 } else { 0.0 };
    }
    let num = c.tp as f64 * c.tn as f64 - c.fp as f64 * c.fn_ as f64;
    let denom = factors.iter().map(|&f| f as f64).product::<f64>().sqrt();
    (num / denom).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    F1,
    Mcc,
}

impl Metric {
    pub fn score(self, c: &ConfusionCounts) -> f64 {
        match self {
            Metric::F1 => f1(c),
            Metric::Mcc => mcc(c),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f1" => Ok(Metric::F1),
            "mcc" => Ok(Metric::Mcc),
            _ => Err(Error::Config(format!(
                "unknown metric {s:?} (expected f1 or mcc)"
            ))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::F1 => "f1",
            Metric::Mcc => "mcc",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SweepMode {
    /// Best threshold chosen independently for each map.
    #[default]
    PerImage,
    /// One threshold shared by the dataset, maximizing the mean score.
    PerDataset,
}

impl FromStr for SweepMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-image" => Ok(SweepMode::PerImage),
            "per-dataset" => Ok(SweepMode::PerDataset),
            _ => Err(Error::Config(format!(
                "unknown sweep mode {s:?} (expected per-image or per-dataset)"
            ))),
        }
    }
}

impl fmt::Display for SweepMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepMode::PerImage => "per-image",
            SweepMode::PerDataset => "per-dataset",
        })
    }
}

/// `{0.01, 0.02, …, 0.99}`.
pub fn default_grid() -> Vec<f64> {
    (1..=99).map(|i| i as f64 / 100.0).collect()
}

/// One map to sweep. `edge` selects edge-enhanced mode.
#[derive(Debug, Clone, Copy)]
pub struct SweepInput<'a> {
    pub surface: &'a ProbabilityMap,
    pub edge: Option<&'a ProbabilityMap>,
    pub gt: &'a BinaryMask,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepChoice {
    pub t_surface: f64,
    pub t_edge: Option<f64>,
    pub score: f64,
    pub counts: ConfusionCounts,
}

fn sorted_grid(grid: &[f64]) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::invalid(
            "optimal_threshold_sweep",
            "empty threshold grid",
        ));
    }
    if let Some(t) = grid.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::invalid(
            "optimal_threshold_sweep",
            format!("threshold {t} outside [0, 1]"),
        ));
    }
    let mut g = grid.to_vec();
    g.sort_by(f64::total_cmp);
    g.dedup();
    Ok(g)
}

/// Confusion counts of `(p >= t)` against `gt` for each sorted threshold,
/// restricted to pixels where `keep` holds.
fn counts_over_grid(
    probs: &[f64],
    gt: &[bool],
    keep: Option<&[bool]>,
    grid: &[f64],
) -> Vec<ConfusionCounts> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    let (mut n_pos, mut n_neg) = (0u64, 0u64);
    for (i, (&p, &g)) in probs.iter().zip(gt).enumerate() {
        if g {
            n_pos += 1;
        } else {
            n_neg += 1;
        }
        if keep.is_none_or(|k| k[i]) {
            if g {
                pos.push(p);
            } else {
                neg.push(p);
            }
        }
    }
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    grid.iter()
        .map(|&t| {
            let tp = (pos.len() - pos.partition_point(|&p| p < t)) as u64;
            let fp = (neg.len() - neg.partition_point(|&p| p < t)) as u64;
            ConfusionCounts {
                tp,
                fp,
                tn: n_neg - fp,
                fn_: n_pos - tp,
            }
        })
        .collect()
}

/// Counts for every candidate, ordered by (t_surface, t_edge) ascending.
fn candidate_counts(input: &SweepInput, grid: &[f64]) -> Result<Vec<ConfusionCounts>> {
    let dims = |m: &ProbabilityMap| (m.height(), m.width());
    let gt_dims = (input.gt.height(), input.gt.width());
    if dims(input.surface) != gt_dims || input.edge.is_some_and(|e| dims(e) != gt_dims) {
        return Err(Error::shape(
            "optimal_threshold_sweep",
            format!("maps of {}x{}", gt_dims.0, gt_dims.1),
            format!("{}x{}", input.surface.height(), input.surface.width()),
        ));
    }
    let probs = input.surface.values();
    let gt = input.gt.values();
    match input.edge {
        None => Ok(counts_over_grid(probs, gt, None, grid)),
        Some(edge) => {
            let filled: Vec<BinaryMask> = grid
                .iter()
                .map(|&te| hole_fill(&threshold(edge, te)))
                .collect();
            let per_edge: Vec<Vec<ConfusionCounts>> = filled
                .iter()
                .map(|f| counts_over_grid(probs, gt, Some(f.values()), grid))
                .collect();
            let mut out = Vec::with_capacity(grid.len() * grid.len());
            for si in 0..grid.len() {
                for counts in &per_edge {
                    out.push(counts[si]);
                }
            }
            Ok(out)
        }
    }
}

fn first_max(scores: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, s) in scores.enumerate() {
        if s > best.1 {
            best = (i, s);
        }
    }
    best
}

/// Picks the threshold(s) maximizing `metric` over `grid`. Ties go to the
/// smallest surface threshold, then the smallest edge threshold. Inputs must
/// either all carry an edge map or none.
pub fn optimal_threshold_sweep(
    inputs: &[SweepInput],
    metric: Metric,
    grid: &[f64],
    mode: SweepMode,
) -> Result<Vec<SweepChoice>> {
    let grid = sorted_grid(grid)?;
    let edge = inputs.first().is_some_and(|i| i.edge.is_some());
    if inputs.iter().any(|i| i.edge.is_some() != edge) {
        return Err(Error::invalid(
            "optimal_threshold_sweep",
            "inputs mix edge-enhanced and surface-only maps",
        ));
    }
    let tables: Vec<Vec<ConfusionCounts>> = inputs
        .par_iter()
        .map(|input| candidate_counts(input, &grid))
        .collect::<Result<_>>()?;
    let candidate = |idx: usize| -> (f64, Option<f64>) {
        if edge {
            (grid[idx / grid.len()], Some(grid[idx % grid.len()]))
        } else {
            (grid[idx], None)
        }
    };
    let choose = |table: &[ConfusionCounts], idx: usize| {
        let (t_surface, t_edge) = candidate(idx);
        SweepChoice {
            t_surface,
            t_edge,
            score: metric.score(&table[idx]),
            counts: table[idx],
        }
    };
    Ok(match mode {
        SweepMode::PerImage => tables
            .iter()
            .map(|t| choose(t, first_max(t.iter().map(|c| metric.score(c))).0))
            .collect(),
        SweepMode::PerDataset => {
            let Some(first) = tables.first() else {
                return Ok(Vec::new());
            };
            let n = tables.len() as f64;
            let (idx, _) = first_max(
                (0..first.len())
                    .map(|k| tables.iter().map(|t| metric.score(&t[k])).sum::<f64>() / n),
            );
            tables.iter().map(|t| choose(t, idx)).collect()
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub image_id: String,
    pub t_surface: f64,
    pub t_edge: Option<f64>,
    pub f1: f64,
    pub mcc: f64,
}

impl EvalRow {
    pub fn from_choice(image_id: impl Into<String>, choice: &SweepChoice) -> Self {
        EvalRow {
            image_id: image_id.into(),
            t_surface: choice.t_surface,
            t_edge: choice.t_edge,
            f1: f1(&choice.counts),
            mcc: mcc(&choice.counts),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean_f1: f64,
    pub mean_mcc: f64,
}

pub const REPORT_HEADER: [&str; 5] = ["image_id", "t_surface", "t_edge", "f1", "mcc"];
const AVERAGE_ID: &str = "AVERAGE";

impl EvalReport {
    pub fn new(rows: Vec<EvalRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("EvalReport::new", "no rows to aggregate"));
        }
        let n = rows.len() as f64;
        let mean_f1 = rows.iter().map(|r| r.f1).sum::<f64>() / n;
        let mean_mcc = rows.iter().map(|r| r.mcc).sum::<f64>() / n;
        Ok(EvalReport {
            rows,
            mean_f1,
            mean_mcc,
        })
    }

    /// Values use Rust's shortest round-trip float formatting, so parsing
    /// the CSV back reproduces them exactly.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(REPORT_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.image_id.clone(),
                r.t_surface.to_string(),
                r.t_edge.map(|t| t.to_string()).unwrap_or_default(),
                r.f1.to_string(),
                r.mcc.to_string(),
            ])?;
        }
        w.write_record([
            AVERAGE_ID.to_string(),
            String::new(),
            String::new(),
            self.mean_f1.to_string(),
            self.mean_mcc.to_string(),
        ])?;
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_csv(input: impl Read) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        if rd.headers()?.iter().ne(REPORT_HEADER) {
            return Err(Error::invalid("EvalReport::read_csv", "unexpected header"));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::invalid("EvalReport::read_csv", format!("bad number {s:?}")))
        };
        let mut rows = Vec::new();
        let mut average = None;
        for rec in rd.records() {
            let rec = rec?;
            if average.is_some() {
                return Err(Error::invalid("EvalReport::read_csv", "rows after AVERAGE"));
            }
            if &rec[0] == AVERAGE_ID {
                average = Some((num(&rec[3])?, num(&rec[4])?));
                continue;
            }
            rows.push(EvalRow {
                image_id: rec[0].to_string(),
                t_surface: num(&rec[1])?,
                t_edge: if rec[2].is_empty() {
                    None
                } else {
                    Some(num(&rec[2])?)
                },
                f1: num(&rec[3])?,
                mcc: num(&rec[4])?,
            });
        }
        let (mean_f1, mean_mcc) =
            average.ok_or_else(|| Error::invalid("EvalReport::read_csv", "missing AVERAGE row"))?;
        Ok(EvalReport {
            rows,
            mean_f1,
            mean_mcc,
        })
    }
}
