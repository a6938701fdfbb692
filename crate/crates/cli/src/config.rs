//! Plain-text `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key is known up front;
//! anything else is an error. Relative paths resolve against the directory
//! holding the config file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use splice_mfcn::datagen::{GenParams, RegionKind, TextureStats};
use splice_mfcn::masks::MaskConvention;
use splice_mfcn::metrics::{default_grid, SweepMode};
use splice_mfcn::model::{parse_list, parse_size};
use splice_mfcn::model::{Heads, ModelConfig};
use splice_mfcn::optim::SgdSettings;
use splice_mfcn::perturb::{protocol, Perturbation};

use crate::error::CliError;

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.txt";

/// Class weighting for the per-pixel cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    MedianFrequency,
    Balanced,
}

impl FromStr for WeightMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "median-frequency" => Ok(WeightMode::MedianFrequency),
            "balanced" => Ok(WeightMode::Balanced),
            _ => Err(format!(
                "unknown class weighting {s:?} (expected median-frequency or balanced)"
            )),
        }
    }
}

impl std::fmt::Display for WeightMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WeightMode::MedianFrequency => "median-frequency",
            WeightMode::Balanced => "balanced",
        })
    }
}

/// What to do with training images whose size differs from `input_size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResizePolicy {
    Reject,
    /// Bilinear resize of the image, nearest-neighbour resize of the mask.
    Resize,
}

impl FromStr for ResizePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "reject" => Ok(ResizePolicy::Reject),
            "resize" => Ok(ResizePolicy::Resize),
            _ => Err(format!(
                "unknown resize policy {s:?} (expected reject or resize)"
            )),
        }
    }
}

impl std::fmt::Display for ResizePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ResizePolicy::Reject => "reject",
            ResizePolicy::Resize => "resize",
        })
    }
}

/// How `cmd_eval` turns a method's files into binary masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodKind {
    /// `surface/ID.png` probability maps, thresholded.
    Surface,
    /// `surface/` and `edge/` maps combined by edge-enhanced inference.
    EdgeEnhanced,
    /// `masks/ID.png` binary masks in the configured convention.
    Mask,
}

impl FromStr for MethodKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "surface" => Ok(MethodKind::Surface),
            "edge-enhanced" => Ok(MethodKind::EdgeEnhanced),
            "mask" => Ok(MethodKind::Mask),
            _ => Err(format!(
                "unknown method kind {s:?} (expected surface, edge-enhanced or mask)"
            )),
        }
    }
}

impl std::fmt::Display for MethodKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MethodKind::Surface => "surface",
            MethodKind::EdgeEnhanced => "edge-enhanced",
            MethodKind::Mask => "mask",
        })
    }
}

/// `method.NAME = KIND:DIR`
#[derive(Debug, Clone, PartialEq)]
pub struct EvalMethod {
    pub name: String,
    pub kind: MethodKind,
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub lr: f64,
    /// Multiplies `lr`; the effective rate is `lr * lr_multiplier`.
    pub lr_multiplier: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub resize_policy: Option<ResizePolicy>,
    pub class_weights: WeightMode,
    pub edge_halfwidth: usize,
    pub log_every: usize,
    pub seed: u64,
    pub mask_convention: MaskConvention,

    pub gen_count: usize,
    pub gen: GenParams,

    pub t_surface: f64,
    pub t_edge: f64,
    pub sweep_grid: Vec<f64>,
    pub sweep_mode: SweepMode,

    pub train_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub infer_dir: Option<PathBuf>,
    pub gt_dir: Option<PathBuf>,
    pub methods: Vec<EvalMethod>,
    pub test_dir: Option<PathBuf>,
    pub sfcn_checkpoint: Option<PathBuf>,
    pub mfcn_checkpoint: Option<PathBuf>,
    pub perturbations: Vec<Perturbation>,
    pub save_perturbed: bool,

    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sgd = SgdSettings::default();
        RunConfig {
            model: ModelConfig::default(),
            lr: sgd.lr,
            lr_multiplier: 1.0,
            momentum: sgd.momentum,
            weight_decay: sgd.weight_decay,
            steps: None,
            batch_size: None,
            resize_policy: None,
            class_weights: WeightMode::MedianFrequency,
            edge_halfwidth: 1,
            log_every: 1,
            seed: 0,
            mask_convention: MaskConvention::default(),
            gen_count: 64,
            gen: GenParams::default(),
            t_surface: 0.5,
            t_edge: 0.5,
            sweep_grid: default_grid(),
            sweep_mode: SweepMode::default(),
            train_dir: None,
            checkpoint: None,
            infer_dir: None,
            gt_dir: None,
            methods: Vec::new(),
            test_dir: None,
            sfcn_checkpoint: None,
            mfcn_checkpoint: None,
            perturbations: protocol(),
            save_perturbed: false,
            out: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>()
        .map_err(|e| format!("bad value {v:?} for {key}: {e}"))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("bad value {v:?} for {key}: expected true or false")),
    }
}

fn parse_f64_list(key: &str, v: &str) -> Result<Vec<f64>, String> {
    v.split(',').map(|s| parse(key, s.trim())).collect()
}

fn parse_pair(key: &str, v: &str) -> Result<(f64, f64), String> {
    match parse_f64_list(key, v)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(format!(
            "{key} expects two comma-separated numbers, got {v:?}"
        )),
    }
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    pub fn sgd(&self) -> SgdSettings {
        SgdSettings {
            lr: self.lr * self.lr_multiplier,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::path(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| CliError::config(format!("line {}: {msg}", lineno + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(at(format!("duplicate key {key}")));
            }
            cfg.set(key, value, base).map_err(at)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str, base: &Path) -> Result<(), String> {
        let path = || Some(base.join(v));
        match key {
            "block_widths" => self.model.block_widths = parse_list(v).map_err(|e| e.to_string())?,
            "convs_per_block" => self.model.convs_per_block = parse(key, v)?,
            "heads" => self.model.heads = parse::<Heads>(key, v)?,
            "input_size" => {
                let (h, w) = parse_size(v).map_err(|e| e.to_string())?;
                self.model.input_h = h;
                self.model.input_w = w;
            }
            "lr" => self.lr = parse(key, v)?,
            "lr_multiplier" => self.lr_multiplier = parse(key, v)?,
            "momentum" => self.momentum = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "steps" => self.steps = Some(parse(key, v)?),
            "batch_size" => self.batch_size = Some(parse(key, v)?),
            "resize_policy" => self.resize_policy = Some(parse(key, v)?),
            "class_weights" => self.class_weights = parse(key, v)?,
            "edge_halfwidth" => self.edge_halfwidth = parse(key, v)?,
            "log_every" => self.log_every = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "mask_convention" => self.mask_convention = parse(key, v)?,
            "gen_count" => self.gen_count = parse(key, v)?,
            "gen_size" => {
                let (h, w) = parse_size(v).map_err(|e| e.to_string())?;
                self.gen.height = h;
                self.gen.width = w;
            }
            "gen_region" => self.gen.region = parse::<RegionKind>(key, v)?,
            "gen_area_range" => self.gen.area_range = parse_pair(key, v)?,
            "gen_host_texture" => {
                let (amplitude, correlation_length) = parse_pair(key, v)?;
                self.gen.host = TextureStats {
                    amplitude,
                    correlation_length,
                };
            }
            "gen_donor_texture" => {
                let (amplitude, correlation_length) = parse_pair(key, v)?;
                self.gen.donor = TextureStats {
                    amplitude,
                    correlation_length,
                };
            }
            "gen_min_color_distance" => self.gen.min_color_distance = parse(key, v)?,
            "gen_blend" => self.gen.blend = parse_bool(key, v)?,
            "gen_max_retries" => self.gen.max_retries = parse(key, v)?,
            "t_surface" => self.t_surface = parse(key, v)?,
            "t_edge" => self.t_edge = parse(key, v)?,
            "sweep_grid" => {
                self.sweep_grid = if v == "default" {
                    default_grid()
                } else {
                    parse_f64_list(key, v)?
                }
            }
            "sweep_mode" => self.sweep_mode = parse(key, v)?,
            "train_dir" => self.train_dir = path(),
            "checkpoint" => self.checkpoint = path(),
            "infer_dir" => self.infer_dir = path(),
            "gt_dir" => self.gt_dir = path(),
            "test_dir" => self.test_dir = path(),
            "sfcn_checkpoint" => self.sfcn_checkpoint = path(),
            "mfcn_checkpoint" => self.mfcn_checkpoint = path(),
            "perturbations" => {
                self.perturbations = if v == "protocol" {
                    protocol()
                } else {
                    v.split(',')
                        .map(|s| parse::<Perturbation>(key, s.trim()))
                        .collect::<Result<_, _>>()?
                }
            }
            "save_perturbed" => self.save_perturbed = parse_bool(key, v)?,
            "out" => self.out = base.join(v),
            _ => {
                if let Some(name) = key.strip_prefix("method.") {
                    let (kind, dir) = v
                        .split_once(':')
                        .ok_or_else(|| format!("{key} expects KIND:DIR, got {v:?}"))?;
                    if name.is_empty() || name.contains(',') {
                        return Err(format!("bad method name in {key}"));
                    }
                    self.methods.push(EvalMethod {
                        name: name.to_string(),
                        kind: parse(key, kind)?,
                        dir: base.join(dir),
                    });
                } else {
                    return Err(format!("unknown key {key}"));
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model
            .validate()
            .map_err(|e| CliError::config(e.to_string()))?;
        let bad = |m: String| Err(CliError::config(m));
        for (k, v) in [("lr", self.lr), ("lr_multiplier", self.lr_multiplier)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{k} must be positive, got {v}"));
            }
        }
        for (k, v) in [
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{k} must be non-negative, got {v}"));
            }
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be at least 1".into());
        }
        if self.log_every == 0 {
            return bad("log_every must be at least 1".into());
        }
        for (k, t) in [("t_surface", self.t_surface), ("t_edge", self.t_edge)] {
            if !(0.0..=1.0).contains(&t) {
                return bad(format!("{k} must lie in [0, 1], got {t}"));
            }
        }
        if self.sweep_grid.is_empty() || self.sweep_grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return bad("sweep_grid values must lie in [0, 1]".into());
        }
        self.gen
            .validate()
            .map_err(|e| CliError::config(e.to_string()))?;
        Ok(())
    }

    /// Every setting except `out`, one per line, in a form `parse` accepts.
    /// Paths are written as resolved.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let m = &self.model;
        kv("block_widths", join(&m.block_widths));
        kv("convs_per_block", m.convs_per_block.to_string());
        kv("heads", m.heads.to_string());
        kv("input_size", format!("{}x{}", m.input_h, m.input_w));
        kv("lr", self.lr.to_string());
        kv("lr_multiplier", self.lr_multiplier.to_string());
        kv("momentum", self.momentum.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        if let Some(v) = self.steps {
            kv("steps", v.to_string());
        }
        if let Some(v) = self.batch_size {
            kv("batch_size", v.to_string());
        }
        if let Some(v) = self.resize_policy {
            kv("resize_policy", v.to_string());
        }
        kv("class_weights", self.class_weights.to_string());
        kv("edge_halfwidth", self.edge_halfwidth.to_string());
        kv("log_every", self.log_every.to_string());
        kv("seed", self.seed.to_string());
        kv("mask_convention", self.mask_convention.to_string());
        let g = &self.gen;
        kv("gen_count", self.gen_count.to_string());
        kv("gen_size", format!("{}x{}", g.height, g.width));
        kv("gen_region", g.region.to_string());
        kv(
            "gen_area_range",
            format!("{},{}", g.area_range.0, g.area_range.1),
        );
        kv(
            "gen_host_texture",
            format!("{},{}", g.host.amplitude, g.host.correlation_length),
        );
        kv(
            "gen_donor_texture",
            format!("{},{}", g.donor.amplitude, g.donor.correlation_length),
        );
        kv("gen_min_color_distance", g.min_color_distance.to_string());
        kv("gen_blend", g.blend.to_string());
        kv("gen_max_retries", g.max_retries.to_string());
        kv("t_surface", self.t_surface.to_string());
        kv("t_edge", self.t_edge.to_string());
        kv("sweep_grid", join(&self.sweep_grid));
        kv("sweep_mode", self.sweep_mode.to_string());
        for (k, p) in [
            ("train_dir", &self.train_dir),
            ("checkpoint", &self.checkpoint),
            ("infer_dir", &self.infer_dir),
            ("gt_dir", &self.gt_dir),
            ("test_dir", &self.test_dir),
            ("sfcn_checkpoint", &self.sfcn_checkpoint),
            ("mfcn_checkpoint", &self.mfcn_checkpoint),
        ] {
            if let Some(p) = p {
                kv(k, p.display().to_string());
            }
        }
        for m in &self.methods {
            kv(
                &format!("method.{}", m.name),
                format!("{}:{}", m.kind, m.dir.display()),
            );
        }
        kv("perturbations", join(&self.perturbations));
        kv("save_perturbed", self.save_perturbed.to_string());
        s
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<(), CliError> {
        let p = dir.join(RESOLVED_CONFIG_FILE);
        std::fs::write(&p, self.to_text()).map_err(|e| CliError::io(&p, e))
    }

    pub fn require<'a, T>(&self, key: &str, v: &'a Option<T>) -> Result<&'a T, CliError> {
        v.as_ref()
            .ok_or_else(|| CliError::config(format!("missing required key {key}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_optimizer_settings() {
        let c = RunConfig::parse("", Path::new(".")).unwrap();
        assert_eq!(c.sgd(), SgdSettings::default());
        assert_eq!(c.sweep_grid.len(), 99);
    }

    #[test]
    fn comments_paths_and_methods() {
        let text = "# run\nlr = 0.0001  # base\nlr_multiplier = 100\n\
                    train_dir = corpus\nmethod.mfcn = edge-enhanced:runs/m\n";
        let c = RunConfig::parse(text, Path::new("/cfg")).unwrap();
        assert!((c.sgd().lr - 0.01).abs() < 1e-15);
        assert_eq!(c.train_dir, Some(PathBuf::from("/cfg/corpus")));
        assert_eq!(c.methods[0].kind, MethodKind::EdgeEnhanced);
        assert_eq!(c.methods[0].dir, PathBuf::from("/cfg/runs/m"));
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed() {
        for text in [
            "learning_rate = 1",
            "lr = 1\nlr = 2",
            "lr 1",
            "heads = triple",
            "t_surface = 1.5",
            "sweep_grid = 0.2,1.2",
            "method.x = surface",
            "batch_size = 0",
        ] {
            let e = RunConfig::parse(text, Path::new(".")).unwrap_err();
            assert_eq!(e.kind, crate::error::ErrorKind::Config, "{text}");
        }
    }

    #[test]
    fn resolved_text_round_trips() {
        let text = "heads = surface\nsteps = 30\nbatch_size = 4\nresize_policy = resize\n\
                    gen_blend = true\nperturbations = jpeg:70,blur:1.5\n\
                    method.a = mask:x\nsweep_grid = 0.25,0.5\nseed = 9\n";
        let c = RunConfig::parse(text, Path::new("/b")).unwrap();
        let again = RunConfig::parse(&c.to_text(), Path::new("/elsewhere")).unwrap();
        assert_eq!(
            again,
            RunConfig {
                out: again.out.clone(),
                ..c.clone()
            }
        );
        assert_eq!(again.to_text(), c.to_text());
    }
}
