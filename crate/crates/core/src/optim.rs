//! SGD with momentum and L2 weight decay.

use crate::layers::LayerParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdSettings {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdSettings {
    fn default() -> Self {
        SgdSettings {
            lr: 1e-4,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

/// `v ← momentum·v + grad + decay·w; w ← w − lr·v` for weights; biases take
/// the same update without decay. Gradients are zeroed afterwards.
pub fn sgd_step(params: &mut LayerParams, settings: &SgdSettings) {
    let SgdSettings {
        lr,
        momentum,
        weight_decay,
    } = *settings;
    let w = params.weight.data_mut();
    let g = params.weight_grad.data();
    let v = params.weight_velocity.data_mut();
    for i in 0..w.len() {
        v[i] = momentum * v[i] + g[i] + weight_decay * w[i];
        w[i] -= lr * v[i];
    }
    for i in 0..params.bias.len() {
        let v = &mut params.bias_velocity[i];
        *v = momentum * *v + params.bias_grad[i];
        params.bias[i] -= lr * *v;
    }
    params.zero_grad();
}
