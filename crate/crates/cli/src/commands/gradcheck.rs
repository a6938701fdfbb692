use splice_mfcn::gradcheck::{end_to_end_check, layer_suite, SuiteEntry};

use crate::config::RunConfig;
use crate::error::{CliError, ErrorKind};
use crate::io::create_dir;

pub const GRADCHECK_FILE: &str = "gradcheck.csv";

/// Worst relative error per layer type, in first-seen order.
pub fn worst_per_layer(entries: &[SuiteEntry]) -> Vec<(&'static str, f64, f64, bool)> {
    let mut out: Vec<(&'static str, f64, f64, bool)> = Vec::new();
    for e in entries {
        let r = &e.report;
        match out.iter_mut().find(|(l, ..)| *l == e.layer) {
            Some(w) => {
                w.1 = w.1.max(r.max_rel_error);
                w.3 &= r.passed();
            }
            None => out.push((e.layer, r.max_rel_error, r.tolerance, r.passed())),
        }
    }
    out
}

/// Runs the layer suite and the end-to-end check on a tiny multi-task
/// network; fails if any layer exceeds its tolerance.
pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<(), CliError> {
    let mut entries = layer_suite(cfg.seed)?;
    entries.extend(end_to_end_check(cfg.seed)?);
    create_dir(&cfg.out)?;
    cfg.write_resolved(&cfg.out)?;

    let path = cfg.out.join(GRADCHECK_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "layer",
        "target",
        "max_rel_error",
        "tolerance",
        "checked",
        "passed",
    ])?;
    for e in &entries {
        w.write_record([
            e.layer.to_string(),
            e.target.to_string(),
            e.report.max_rel_error.to_string(),
            e.report.tolerance.to_string(),
            e.report.checked.to_string(),
            e.report.passed().to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;

    let worst = worst_per_layer(&entries);
    for (layer, err, tol, ok) in &worst {
        println!(
            "{layer:<26} worst_rel_error={err:.3e} tolerance={tol:.0e} {}",
            if *ok { "ok" } else { "FAIL" }
        );
    }
    let failed: Vec<&str> = worst.iter().filter(|w| !w.3).map(|w| w.0).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::new(
            ErrorKind::Check,
            format!("gradient check failed for {}", failed.join(", ")),
        ))
    }
}
