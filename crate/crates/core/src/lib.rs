//! Single-task (SFCN) and multi-task (MFCN) fully convolutional networks for
//! localizing spliced regions in images, trained from scratch on the CPU.
//!
//! The pieces, bottom up:
//!
//! - [`tensor`] and [`layers`]: NCHW `f64` tensors, conv / transposed conv /
//!   batchnorm / pooling with hand-written backward passes, weighted softmax
//!   cross-entropy.
//! - [`model`]: the FCN-8s style network with a surface head and an optional
//!   edge head, SGD training and binary checkpoints.
//! - [`masks`], [`postprocess`], [`metrics`]: ground-truth handling, the
//!   edge-enhanced inference rule and F1 / MCC threshold sweeps.
//! - [`perturb`] and [`datagen`]: robustness perturbations and the synthetic
//!   spliced-image generator.

pub mod datagen;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod masks;
pub mod metrics;
pub mod model;
pub mod morphology;
pub mod optim;
pub mod perturb;
pub mod postprocess;
pub mod tensor;

pub use error::{Error, Result};
pub use masks::{BinaryMask, ClassWeights, MaskConvention};
pub use model::{Heads, Model, ModelConfig};
pub use postprocess::ProbabilityMap;
pub use tensor::{Shape, Tensor};
