//! FCN-8s style splicing localization networks.
//!
//! The encoder is five blocks of `3×3 conv → batchnorm → ReLU` units, each
//! block closed by 2×2 max pooling. Every head scores the pool-3, pool-4 and
//! pool-5 features with 1×1 convolutions and fuses them coarse-to-fine:
//!
//! ```text
//! up2(score5) + score4 → up2(·) + score3 → up8(·)  →  logits at input size
//! ```
//!
//! The single-task network has only the surface head; the multi-task network
//! adds an edge head that shares the whole encoder.

mod checkpoint;
mod config;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION,
};
pub use config::{
    parse_list, parse_size, Heads, ModelConfig, INPUT_CHANNELS, NUM_BLOCKS, NUM_CLASSES, STRIDE,
};

use crate::error::{Error, Result};
use crate::layers::{
    maxpool2, maxpool2_backward, relu, relu_backward, weighted_softmax_ce, BatchNorm,
    BatchNormCache, BatchNormState, Conv2d, ConvGeometry, LayerParams, Mode, PoolIndices,
    TransposedConv,
};
use crate::masks::{BinaryMask, ClassWeights};
use crate::optim::{sgd_step, SgdSettings};
use crate::tensor::{Shape, Tensor};

/// `3×3 conv → batchnorm → ReLU`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvUnit {
    pub conv: Conv2d,
    pub bn: BatchNormState,
}

/// One decoder branch.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub score3: Conv2d,
    pub score4: Conv2d,
    pub score5: Conv2d,
    /// 2× upsampling of the pool-5 score map.
    pub up5: TransposedConv,
    /// 2× upsampling of the fused pool-4 map.
    pub up4: TransposedConv,
    /// Final 8× upsampling to input resolution.
    pub up_final: TransposedConv,
}

impl Head {
    fn new(widths: &[usize]) -> Result<Self> {
        // Score layers start at zero so a fresh head predicts 0.5 everywhere.
        let pointwise = ConvGeometry::new(1, 0, 1);
        let score = |c_in| Conv2d::new(c_in, 2, pointwise);
        let (score3, score4, score5) = (score(widths[2]), score(widths[3]), score(widths[4]));
        let up = |factor| -> Result<TransposedConv> {
            let mut t = TransposedConv::new(2, 2, factor)?;
            t.bilinear_init();
            Ok(t)
        };
        Ok(Head {
            score3,
            score4,
            score5,
            up5: up(2)?,
            up4: up(2)?,
            up_final: up(8)?,
        })
    }

    fn forward(&self, pools: &[Tensor; 3]) -> Result<(Tensor, HeadTrace)> {
        let s5 = self.score5.forward(&pools[2])?;
        let mut fuse4 = self.up5.forward(&s5)?;
        fuse4.add_assign(&self.score4.forward(&pools[1])?);
        let mut fuse3 = self.up4.forward(&fuse4)?;
        fuse3.add_assign(&self.score3.forward(&pools[0])?);
        let out = self.up_final.forward(&fuse3)?;
        Ok((out, HeadTrace { s5, fuse4, fuse3 }))
    }

    /// Returns gradients for pool-3, pool-4 and pool-5 outputs.
    fn backward(
        &mut self,
        pools: &[Tensor; 3],
        trace: &HeadTrace,
        grad_out: &Tensor,
    ) -> Result<[Tensor; 3]> {
        let g_fuse3 = self.up_final.backward(&trace.fuse3, grad_out)?;
        let g_pool3 = self.score3.backward(&pools[0], &g_fuse3)?;
        let g_fuse4 = self.up4.backward(&trace.fuse4, &g_fuse3)?;
        let g_pool4 = self.score4.backward(&pools[1], &g_fuse4)?;
        let g_s5 = self.up5.backward(&trace.s5, &g_fuse4)?;
        let g_pool5 = self.score5.backward(&pools[2], &g_s5)?;
        Ok([g_pool3, g_pool4, g_pool5])
    }

    /// He-normal re-initialization of the three score layers.
    pub fn randomize_scores<R: rand::Rng + ?Sized>(&mut self, rng: &mut R) {
        self.score3.he_init(rng);
        self.score4.he_init(rng);
        self.score5.he_init(rng);
    }

    fn layers_mut(&mut self) -> [(&'static str, &mut LayerParams); 6] {
        [
            ("score3", &mut self.score3.params),
            ("score4", &mut self.score4.params),
            ("score5", &mut self.score5.params),
            ("up5", &mut self.up5.params),
            ("up4", &mut self.up4.params),
            ("up_final", &mut self.up_final.params),
        ]
    }

    fn layers(&self) -> [(&'static str, &LayerParams); 6] {
        [
            ("score3", &self.score3.params),
            ("score4", &self.score4.params),
            ("score5", &self.score5.params),
            ("up5", &self.up5.params),
            ("up4", &self.up4.params),
            ("up_final", &self.up_final.params),
        ]
    }
}

#[derive(Debug, Clone)]
struct UnitTrace {
    input: Tensor,
    bn: BatchNormCache,
    pre_relu: Tensor,
}

#[derive(Debug, Clone)]
struct HeadTrace {
    s5: Tensor,
    fuse4: Tensor,
    fuse3: Tensor,
}

/// Intermediate values retained by a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    units: Vec<Vec<UnitTrace>>,
    pool_indices: Vec<PoolIndices>,
    /// Outputs of pools 3, 4 and 5.
    taps: [Tensor; 3],
    heads: Vec<HeadTrace>,
}

/// Per-head logits, each (n, 2, h, w).
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub surface: Tensor,
    pub edge: Option<Tensor>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub surface: f64,
    /// `None` for the single-task network.
    pub edge: Option<f64>,
}

/// One training minibatch. Edge labels are required exactly when the model
/// has an edge head.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub images: Tensor,
    pub surface: Vec<BinaryMask>,
    pub edge: Option<Vec<BinaryMask>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    pub blocks: Vec<Vec<ConvUnit>>,
    pub surface: Head,
    pub edge: Option<Head>,
    /// Number of optimizer steps taken.
    pub step: u64,
}

impl Model {
    /// He-normal encoder convolutions, zero score layers, bilinear
    /// upsampling, zero biases; all randomness drawn from `seed`.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocks = Vec::with_capacity(NUM_BLOCKS);
        let mut c_in = INPUT_CHANNELS;
        for &width in &config.block_widths {
            let mut units = Vec::with_capacity(config.convs_per_block);
            for _ in 0..config.convs_per_block {
                let mut conv = Conv2d::new(c_in, width, ConvGeometry::new(3, 1, 1));
                conv.he_init(&mut rng);
                units.push(ConvUnit {
                    conv,
                    bn: BatchNormState::new(width),
                });
                c_in = width;
            }
            blocks.push(units);
        }
        let surface = Head::new(&config.block_widths)?;
        let edge = if config.heads.has_edge() {
            Some(Head::new(&config.block_widths)?)
        } else {
            None
        };
        Ok(Model {
            config,
            blocks,
            surface,
            edge,
            step: 0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn has_edge(&self) -> bool {
        self.edge.is_some()
    }

    /// He-normal score layers in every head, drawn from `seed`. A freshly
    /// built model has all-zero scores, which blocks gradient flow into the
    /// encoder on the first step; tests that probe that flow use this.
    pub fn randomize_scores(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.surface.randomize_scores(&mut rng);
        if let Some(edge) = &mut self.edge {
            edge.randomize_scores(&mut rng);
        }
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_params(|_, p| n += p.num_params());
        n
    }

    /// The network is fully convolutional: any RGB input whose sides are
    /// multiples of 32 is accepted.
    fn check_input(&self, images: &Tensor) -> Result<()> {
        let s = images.shape();
        if s.c != INPUT_CHANNELS || s.n == 0 {
            return Err(Error::shape(
                "Model::forward",
                format!("(n >= 1, {INPUT_CHANNELS}, h, w)"),
                s,
            ));
        }
        config::check_input_dims(s.h, s.w).map_err(|msg| Error::shape("Model::forward", msg, s))
    }

    pub fn forward(&self, images: &Tensor, mode: Mode) -> Result<(HeadOutputs, ForwardTrace)> {
        self.check_input(images)?;
        let mut x = images.clone();
        let mut units_trace = Vec::with_capacity(NUM_BLOCKS);
        let mut pool_indices = Vec::with_capacity(NUM_BLOCKS);
        let mut taps = Vec::with_capacity(3);
        for (b, block) in self.blocks.iter().enumerate() {
            let mut traces = Vec::with_capacity(block.len());
            for unit in block {
                let conv_out = unit.conv.forward(&x)?;
                let (pre_relu, bn) = BatchNorm::forward(&conv_out, &unit.bn, mode)?;
                let out = relu(&pre_relu);
                traces.push(UnitTrace {
                    input: std::mem::replace(&mut x, out),
                    bn,
                    pre_relu,
                });
            }
            let (pooled, idx) = maxpool2(&x)?;
            x = pooled;
            if b >= 2 {
                taps.push(x.clone());
            }
            units_trace.push(traces);
            pool_indices.push(idx);
        }
        let taps: [Tensor; 3] = taps.try_into().expect("three pooling taps");
        let (surface, s_trace) = self.surface.forward(&taps)?;
        let mut heads = vec![s_trace];
        let edge = match &self.edge {
            Some(head) => {
                let (e, e_trace) = head.forward(&taps)?;
                heads.push(e_trace);
                Some(e)
            }
            None => None,
        };
        Ok((
            HeadOutputs { surface, edge },
            ForwardTrace {
                units: units_trace,
                pool_indices,
                taps,
                heads,
            },
        ))
    }

    pub fn infer(&self, images: &Tensor) -> Result<HeadOutputs> {
        Ok(self.forward(images, Mode::Inference)?.0)
    }

    /// Backpropagates head-logit gradients through the whole network,
    /// accumulating into every parameter gradient. Returns the gradient with
    /// respect to the input images.
    pub fn backward(
        &mut self,
        trace: &ForwardTrace,
        grad_surface: &Tensor,
        grad_edge: Option<&Tensor>,
    ) -> Result<Tensor> {
        let mut tap_grads = self
            .surface
            .backward(&trace.taps, &trace.heads[0], grad_surface)?;
        match (&mut self.edge, grad_edge) {
            (Some(head), Some(g)) => {
                let eg = head.backward(&trace.taps, &trace.heads[1], g)?;
                for (a, b) in tap_grads.iter_mut().zip(&eg) {
                    a.add_assign(b);
                }
            }
            (None, None) => {}
            (Some(_), None) => {
                return Err(Error::invalid(
                    "Model::backward",
                    "edge head needs a gradient",
                ))
            }
            (None, Some(_)) => {
                return Err(Error::invalid("Model::backward", "model has no edge head"))
            }
        }
        let [g3, g4, g5] = tap_grads;
        let mut g = g5;
        for b in (0..NUM_BLOCKS).rev() {
            match b {
                3 => g.add_assign(&g4),
                2 => g.add_assign(&g3),
                _ => {}
            }
            g = maxpool2_backward(&trace.pool_indices[b], &g)?;
            for (unit, ut) in self.blocks[b].iter_mut().zip(&trace.units[b]).rev() {
                g = relu_backward(&ut.pre_relu, &g)?;
                g = BatchNorm::backward(&mut unit.bn, &ut.bn, &g)?;
                g = unit.conv.backward(&ut.input, &g)?;
            }
        }
        Ok(g)
    }

    fn check_labels(&self, batch: &TrainBatch) -> Result<()> {
        match (self.has_edge(), batch.edge.is_some()) {
            (true, false) => Err(Error::invalid(
                "train_step",
                "multi-task model requires edge labels",
            )),
            (false, true) => Err(Error::invalid(
                "train_step",
                "single-task model takes no edge labels",
            )),
            _ => Ok(()),
        }
    }

    /// Training-mode losses without any backward pass or state change.
    pub fn evaluate_loss(
        &self,
        batch: &TrainBatch,
        weights_surface: ClassWeights,
        weights_edge: ClassWeights,
    ) -> Result<LossReport> {
        self.check_labels(batch)?;
        let (out, _) = self.forward(&batch.images, Mode::Training)?;
        let (surface, _) = weighted_softmax_ce(&out.surface, &batch.surface, weights_surface)?;
        let edge = match (&out.edge, &batch.edge) {
            (Some(logits), Some(labels)) => {
                Some(weighted_softmax_ce(logits, labels, weights_edge)?.0)
            }
            _ => None,
        };
        Ok(LossReport {
            total: surface + edge.unwrap_or(0.0),
            surface,
            edge,
        })
    }

    /// Forward in training mode, losses, and backward. Gradients accumulate
    /// into the parameters; nothing else is modified.
    pub fn compute_gradients(
        &mut self,
        batch: &TrainBatch,
        weights_surface: ClassWeights,
        weights_edge: ClassWeights,
    ) -> Result<(LossReport, ForwardTrace)> {
        self.check_labels(batch)?;
        let (out, trace) = self.forward(&batch.images, Mode::Training)?;
        let (loss_s, grad_s) = weighted_softmax_ce(&out.surface, &batch.surface, weights_surface)?;
        let (loss_e, grad_e) = match (&out.edge, &batch.edge) {
            (Some(logits), Some(labels)) => {
                let (l, g) = weighted_softmax_ce(logits, labels, weights_edge)?;
                (Some(l), Some(g))
            }
            _ => (None, None),
        };
        self.backward(&trace, &grad_s, grad_e.as_ref())?;
        let report = LossReport {
            total: loss_s + loss_e.unwrap_or(0.0),
            surface: loss_s,
            edge: loss_e,
        };
        Ok((report, trace))
    }

    /// One SGD step on the summed surface and edge losses.
    pub fn train_step(
        &mut self,
        batch: &TrainBatch,
        weights_surface: ClassWeights,
        weights_edge: ClassWeights,
        sgd: &SgdSettings,
    ) -> Result<LossReport> {
        self.zero_grad();
        let (report, trace) = self.compute_gradients(batch, weights_surface, weights_edge)?;
        self.commit_running_stats(&trace);
        self.visit_params_mut(|_, p| sgd_step(p, sgd));
        self.step += 1;
        Ok(report)
    }

    /// Folds the batch statistics of a training-mode pass into every
    /// batchnorm's running estimates.
    pub fn commit_running_stats(&mut self, trace: &ForwardTrace) {
        for (block, traces) in self.blocks.iter_mut().zip(&trace.units) {
            for (unit, ut) in block.iter_mut().zip(traces) {
                BatchNorm::update_running_stats(&mut unit.bn, &ut.bn);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.visit_params_mut(|_, p| p.zero_grad());
    }

    /// Every learnable parameter set, in a fixed order, with its name.
    pub fn visit_params_mut(&mut self, mut f: impl FnMut(&str, &mut LayerParams)) {
        for (b, block) in self.blocks.iter_mut().enumerate() {
            for (u, unit) in block.iter_mut().enumerate() {
                f(
                    &format!("enc.{}.{}.conv", b + 1, u + 1),
                    &mut unit.conv.params,
                );
                f(&format!("enc.{}.{}.bn", b + 1, u + 1), &mut unit.bn.affine);
            }
        }
        for (name, p) in self.surface.layers_mut() {
            f(&format!("surface.{name}"), p);
        }
        if let Some(edge) = &mut self.edge {
            for (name, p) in edge.layers_mut() {
                f(&format!("edge.{name}"), p);
            }
        }
    }

    pub fn visit_params(&self, mut f: impl FnMut(&str, &LayerParams)) {
        for (b, block) in self.blocks.iter().enumerate() {
            for (u, unit) in block.iter().enumerate() {
                f(&format!("enc.{}.{}.conv", b + 1, u + 1), &unit.conv.params);
                f(&format!("enc.{}.{}.bn", b + 1, u + 1), &unit.bn.affine);
            }
        }
        for (name, p) in self.surface.layers() {
            f(&format!("surface.{name}"), p);
        }
        if let Some(edge) = &self.edge {
            for (name, p) in edge.layers() {
                f(&format!("edge.{name}"), p);
            }
        }
    }

    pub(crate) fn bn_states_mut(&mut self) -> impl Iterator<Item = (String, &mut BatchNormState)> {
        self.blocks.iter_mut().enumerate().flat_map(|(b, block)| {
            block
                .iter_mut()
                .enumerate()
                .map(move |(u, unit)| (format!("enc.{}.{}.bn", b + 1, u + 1), &mut unit.bn))
        })
    }

    pub(crate) fn bn_states(&self) -> impl Iterator<Item = (String, &BatchNormState)> {
        self.blocks.iter().enumerate().flat_map(|(b, block)| {
            block
                .iter()
                .enumerate()
                .map(move |(u, unit)| (format!("enc.{}.{}.bn", b + 1, u + 1), &unit.bn))
        })
    }
}

/// Maps 8-bit RGB images to a (n, 3, h, w) tensor with values in [−0.5, 0.5].
pub fn images_to_tensor(images: &[&image::RgbImage]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::invalid("images_to_tensor", "no images"))?;
    let (w, h) = first.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut t = Tensor::zeros(Shape::new(images.len(), INPUT_CHANNELS, h, w));
    for (n, img) in images.iter().enumerate() {
        if img.dimensions() != first.dimensions() {
            return Err(Error::shape(
                "images_to_tensor",
                format!("{w}x{h}"),
                format!("{}x{}", img.width(), img.height()),
            ));
        }
        let dst = t.sample_mut(n);
        for (i, p) in img.pixels().enumerate() {
            for c in 0..3 {
                dst[c * h * w + i] = f64::from(p.0[c]) / 255.0 - 0.5;
            }
        }
    }
    Ok(t)
}
