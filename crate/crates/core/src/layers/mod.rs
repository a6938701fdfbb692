//! Forward and backward passes for every layer in the network, each written
//! against explicit caches rather than an autodiff graph.

mod activation;
mod batchnorm;
mod conv;
mod deconv;
mod gemm;
mod loss;
mod params;
mod pool;

pub use activation::{add, add_backward, relu, relu_backward};
pub use batchnorm::{BatchNorm, BatchNormCache, BatchNormState, Mode, BN_EPS, BN_MOMENTUM};
pub use conv::{conv2d, conv2d_backward, Conv2d, ConvGeometry};
pub use deconv::{bilinear_kernel, transposed_conv, transposed_conv_backward, TransposedConv};
pub use loss::{weighted_softmax_ce, weighted_softmax_ce_labels};
pub use params::LayerParams;
pub use pool::{maxpool2, maxpool2_backward, PoolIndices};
