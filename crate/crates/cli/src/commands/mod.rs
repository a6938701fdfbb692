mod eval;
mod gradcheck;
mod perturb;
mod train;

use rayon::prelude::*;
use splice_mfcn::datagen::generate_corpus;
use splice_mfcn::masks::save_mask;
use splice_mfcn::model::load_checkpoint;
use splice_mfcn::postprocess::{edge_enhanced_combine, save_probability_map, threshold};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::io::{
    create_dir, input_images, load_rgb, predict, require_dir, EDGE_DIR, MASKS_DIR, SURFACE_DIR,
};

pub use eval::{cmd_eval, EVAL_SUMMARY_FILE};
pub use gradcheck::{cmd_gradcheck, GRADCHECK_FILE};
pub use perturb::{cmd_perturb, CONVENTIONS_FILE, SNR_FILE};
pub use train::{
    class_weights, cmd_train, load_train_set, make_batch, train, write_loss_log, BatchSchedule,
    TrainOutcome, TrainSet, CHECKPOINT_FILE, LOSS_HEADER, LOSS_LOG_FILE, WEIGHTS_FILE,
};

pub fn cmd_gen(cfg: &RunConfig) -> Result<(), CliError> {
    create_dir(&cfg.out)?;
    cfg.write_resolved(&cfg.out)?;
    let rows = generate_corpus(
        cfg.gen_count,
        &cfg.gen,
        cfg.seed,
        cfg.mask_convention,
        &cfg.out,
    )?;
    println!("generated {} samples in {}", rows.len(), cfg.out.display());
    Ok(())
}

/// Writes `surface/ID.png`, `edge/ID.png` (multi-task model only) and the
/// binary output `masks/ID.png` for every input image. Multi-task masks use
/// edge-enhanced inference at (`t_surface`, `t_edge`).
pub fn cmd_infer(cfg: &RunConfig) -> Result<(), CliError> {
    let ckpt = cfg.require("checkpoint", &cfg.checkpoint)?;
    if !ckpt.is_file() {
        return Err(CliError::path(format!(
            "checkpoint {} not found",
            ckpt.display()
        )));
    }
    let dir = cfg.require("infer_dir", &cfg.infer_dir)?;
    require_dir("infer_dir", dir)?;
    let model = load_checkpoint(ckpt)?;
    let inputs = input_images(dir)?;
    if inputs.is_empty() {
        return Err(CliError::path(format!("no images under {}", dir.display())));
    }
    create_dir(&cfg.out)?;
    cfg.write_resolved(&cfg.out)?;
    for sub in [SURFACE_DIR, MASKS_DIR] {
        create_dir(&cfg.out.join(sub))?;
    }
    if model.has_edge() {
        create_dir(&cfg.out.join(EDGE_DIR))?;
    }
    inputs.par_iter().try_for_each(|(id, path)| {
        let img = load_rgb(path)?;
        let (surface, edge) = predict(&model, &img)?;
        let name = format!("{id}.png");
        save_probability_map(&surface, cfg.out.join(SURFACE_DIR).join(&name))?;
        let mask = match &edge {
            Some(e) => {
                save_probability_map(e, cfg.out.join(EDGE_DIR).join(&name))?;
                edge_enhanced_combine(&surface, e, cfg.t_surface, cfg.t_edge)?
            }
            None => threshold(&surface, cfg.t_surface),
        };
        save_mask(
            &mask,
            cfg.out.join(MASKS_DIR).join(&name),
            cfg.mask_convention,
        )?;
        Ok::<_, CliError>(())
    })?;
    println!(
        "wrote maps for {} images to {}",
        inputs.len(),
        cfg.out.display()
    );
    Ok(())
}
