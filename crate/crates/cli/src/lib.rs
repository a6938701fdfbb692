//! Command-line workflows over `splice_mfcn`: corpus generation, training,
//! inference, evaluation, robustness tables and gradient checking.
//!
//! Every command reads a [`RunConfig`], writes its outputs plus
//! `resolved_config.txt` into `out`, and is deterministic given the config.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

use std::path::{Path, PathBuf};

pub use config::RunConfig;
pub use error::{CliError, ErrorKind};

pub const THREADS_ENV: &str = "SPLICE_MFCN_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Gen,
    Train,
    Infer,
    Eval,
    Perturb,
    Gradcheck,
}

/// Loads the config (defaults when `config` is `None`) and applies the
/// `--seed` / `--out` overrides.
pub fn resolve_config(
    config: Option<&Path>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<RunConfig, CliError> {
    let mut cfg = match config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.out = o;
    }
    Ok(cfg)
}

pub fn run(cmd: Command, cfg: &RunConfig) -> Result<(), CliError> {
    match cmd {
        Command::Gen => commands::cmd_gen(cfg),
        Command::Train => commands::cmd_train(cfg),
        Command::Infer => commands::cmd_infer(cfg),
        Command::Eval => commands::cmd_eval(cfg),
        Command::Perturb => commands::cmd_perturb(cfg),
        Command::Gradcheck => commands::cmd_gradcheck(cfg),
    }
}

/// Sizes the global rayon pool from `SPLICE_MFCN_THREADS` when set.
pub fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::config(format!(
            "{THREADS_ENV} must be a positive integer, got {v:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::config(format!("thread pool: {e}")))
}
