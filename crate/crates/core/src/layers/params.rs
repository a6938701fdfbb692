use crate::tensor::{Shape, Tensor};

/// Learnable weight tensor and per-output-channel bias, with gradients and
/// momentum buffers of identical shape.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Vec<f64>,
    pub weight_grad: Tensor,
    pub bias_grad: Vec<f64>,
    pub weight_velocity: Tensor,
    pub bias_velocity: Vec<f64>,
}

impl LayerParams {
    pub fn new(weight: Tensor, bias: Vec<f64>) -> Self {
        let shape = weight.shape();
        let nb = bias.len();
        LayerParams {
            weight,
            bias,
            weight_grad: Tensor::zeros(shape),
            bias_grad: vec![0.0; nb],
            weight_velocity: Tensor::zeros(shape),
            bias_velocity: vec![0.0; nb],
        }
    }

    pub fn zeros(weight_shape: Shape, bias_len: usize) -> Self {
        Self::new(Tensor::zeros(weight_shape), vec![0.0; bias_len])
    }

    pub fn zero_grad(&mut self) {
        self.weight_grad.fill(0.0);
        self.bias_grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn num_params(&self) -> usize {
        self.weight.shape().len() + self.bias.len()
    }
}
