use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Heads {
    /// Single-task network (SFCN).
    SurfaceOnly,
    /// Multi-task network (MFCN) with a second, edge-label branch.
    SurfaceEdge,
}

impl Heads {
    pub fn has_edge(self) -> bool {
        matches!(self, Heads::SurfaceEdge)
    }
}

impl FromStr for Heads {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "surface" | "surface-only" | "sfcn" => Ok(Heads::SurfaceOnly),
            "surface+edge" | "mfcn" => Ok(Heads::SurfaceEdge),
            other => Err(Error::Config(format!(
                "unknown heads {other:?} (expected surface or surface+edge)"
            ))),
        }
    }
}

impl fmt::Display for Heads {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Heads::SurfaceOnly => "surface",
            Heads::SurfaceEdge => "surface+edge",
        })
    }
}

pub const NUM_BLOCKS: usize = 5;
pub const NUM_CLASSES: usize = 2;
pub const INPUT_CHANNELS: usize = 3;
/// Total downsampling of the encoder (five 2×2 poolings).
pub const STRIDE: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub block_widths: Vec<usize>,
    pub convs_per_block: usize,
    pub heads: Heads,
    pub input_h: usize,
    pub input_w: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            block_widths: vec![16, 32, 64, 128, 128],
            convs_per_block: 2,
            heads: Heads::SurfaceEdge,
            input_h: 64,
            input_w: 64,
        }
    }
}

impl ModelConfig {
    pub fn sfcn() -> Self {
        ModelConfig {
            heads: Heads::SurfaceOnly,
            ..Self::default()
        }
    }

    pub fn mfcn() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_widths.len() != NUM_BLOCKS {
            return Err(Error::Config(format!(
                "expected exactly {NUM_BLOCKS} block widths, got {}",
                self.block_widths.len()
            )));
        }
        if self.block_widths.contains(&0) {
            return Err(Error::Config("block widths must be positive".into()));
        }
        if self.convs_per_block == 0 {
            return Err(Error::Config("convs_per_block must be at least 1".into()));
        }
        check_input_dims(self.input_h, self.input_w).map_err(Error::Config)
    }

    /// `key=value` lines, the form embedded in checkpoints.
    pub fn to_text(&self) -> String {
        let widths: Vec<String> = self.block_widths.iter().map(|w| w.to_string()).collect();
        format!(
            "block_widths={}\nconvs_per_block={}\nheads={}\ninput_size={}x{}\n",
            widths.join(","),
            self.convs_per_block,
            self.heads,
            self.input_h,
            self.input_w
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        let mut seen = [false; 4];
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("malformed config line {line:?}")))?;
            let value = value.trim();
            match key.trim() {
                "block_widths" => {
                    cfg.block_widths = parse_list(value)?;
                    seen[0] = true;
                }
                "convs_per_block" => {
                    cfg.convs_per_block = parse_num(value)?;
                    seen[1] = true;
                }
                "heads" => {
                    cfg.heads = value.parse()?;
                    seen[2] = true;
                }
                "input_size" => {
                    (cfg.input_h, cfg.input_w) = parse_size(value)?;
                    seen[3] = true;
                }
                other => return Err(Error::Config(format!("unknown model key {other:?}"))),
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Config("model config text is missing keys".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub(crate) fn check_input_dims(h: usize, w: usize) -> std::result::Result<(), String> {
    if h == 0 || w == 0 || !h.is_multiple_of(STRIDE) || !w.is_multiple_of(STRIDE) {
        return Err(format!(
            "input size {h}x{w} must be a positive multiple of {STRIDE} in both dims"
        ));
    }
    Ok(())
}

fn parse_num(s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("expected a non-negative integer, got {s:?}")))
}

pub fn parse_list(s: &str) -> Result<Vec<usize>> {
    s.split(',').map(parse_num).collect()
}

/// `HxW`, or a single number for square inputs.
pub fn parse_size(s: &str) -> Result<(usize, usize)> {
    match s.split_once('x') {
        Some((h, w)) => Ok((parse_num(h)?, parse_num(w)?)),
        None => {
            let n = parse_num(s)?;
            Ok((n, n))
        }
    }
}
