use super::params::LayerParams;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const BN_EPS: f64 = 1e-5;
/// Weight kept on the old running statistic at each update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Training,
    Inference,
}

/// Per-channel affine parameters and running statistics. The affine part is
/// stored as a [`LayerParams`] with a (1, c, 1, 1) weight (scale) and a
/// length-c bias (shift) so the optimizer treats it like any other layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub affine: LayerParams,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            affine: LayerParams::new(
                Tensor::full(Shape::new(1, channels, 1, 1), 1.0),
                vec![0.0; channels],
            ),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: BN_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn scale(&self) -> &[f64] {
        self.affine.weight.data()
    }

    pub fn shift(&self) -> &[f64] {
        &self.affine.bias
    }
}

/// What the backward pass needs from a forward call.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub mode: Mode,
    pub x_hat: Tensor,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    /// Biased batch variance (the one used for normalization).
    pub batch_var: Vec<f64>,
}

fn channel_sums<F: Fn(usize, f64) -> f64>(t: &Tensor, f: F) -> Vec<f64> {
    let s = t.shape();
    let plane = s.plane();
    let mut out = vec![0.0; s.c];
    for n in 0..s.n {
        let sample = t.sample(n);
        for (c, acc) in out.iter_mut().enumerate() {
            *acc += sample[c * plane..(c + 1) * plane]
                .iter()
                .map(|&v| f(c, v))
                .sum::<f64>();
        }
    }
    out
}

pub struct BatchNorm;

impl BatchNorm {
    pub fn forward(
        input: &Tensor,
        state: &BatchNormState,
        mode: Mode,
    ) -> Result<(Tensor, BatchNormCache)> {
        let s = input.shape();
        if s.c != state.channels() || state.affine.weight.shape().c != s.c {
            return Err(Error::shape(
                "batchnorm",
                format!("{} channels", state.channels()),
                s,
            ));
        }
        let m = s.n * s.plane();
        let (mean, var) = match mode {
            Mode::Training => {
                if m < 2 {
                    return Err(Error::invalid(
                        "batchnorm",
                        format!("training mode needs >= 2 values per channel, got {m}"),
                    ));
                }
                let mean: Vec<f64> = channel_sums(input, |_, v| v)
                    .into_iter()
                    .map(|v| v / m as f64)
                    .collect();
                let var: Vec<f64> = channel_sums(input, |c, v| (v - mean[c]).powi(2))
                    .into_iter()
                    .map(|v| v / m as f64)
                    .collect();
                (mean, var)
            }
            Mode::Inference => (state.running_mean.clone(), state.running_var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.eps).sqrt()).collect();
        let scale = state.scale();
        let shift = state.shift();
        let plane = s.plane();

        let mut x_hat = Tensor::zeros(s);
        let mut out = Tensor::zeros(s);
        for n in 0..s.n {
            let src = input.sample(n);
            let xh = x_hat.sample_mut(n);
            for c in 0..s.c {
                for i in c * plane..(c + 1) * plane {
                    xh[i] = (src[i] - mean[c]) * inv_std[c];
                }
            }
            let xh = x_hat.sample(n);
            let dst = out.sample_mut(n);
            for c in 0..s.c {
                for i in c * plane..(c + 1) * plane {
                    dst[i] = scale[c] * xh[i] + shift[c];
                }
            }
        }
        Ok((
            out,
            BatchNormCache {
                mode,
                x_hat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
            },
        ))
    }

    /// Exponential moving average of the batch statistics. The running
    /// variance uses the unbiased estimate. No-op for inference caches.
    pub fn update_running_stats(state: &mut BatchNormState, cache: &BatchNormCache) {
        if cache.mode != Mode::Training {
            return;
        }
        let s = cache.x_hat.shape();
        let m = (s.n * s.plane()) as f64;
        let unbias = m / (m - 1.0);
        for c in 0..state.channels() {
            state.running_mean[c] =
                BN_MOMENTUM * state.running_mean[c] + (1.0 - BN_MOMENTUM) * cache.batch_mean[c];
            state.running_var[c] = BN_MOMENTUM * state.running_var[c]
                + (1.0 - BN_MOMENTUM) * cache.batch_var[c] * unbias;
        }
    }

    /// Accumulates scale/shift gradients and returns the input gradient.
    pub fn backward(
        state: &mut BatchNormState,
        cache: &BatchNormCache,
        grad_out: &Tensor,
    ) -> Result<Tensor> {
        let s = cache.x_hat.shape();
        grad_out.ensure_shape("batchnorm_backward", s)?;
        let plane = s.plane();
        let m = (s.n * plane) as f64;

        let mut sum_dy = vec![0.0; s.c];
        let mut sum_dy_xhat = vec![0.0; s.c];
        for n in 0..s.n {
            let g = grad_out.sample(n);
            let xh = cache.x_hat.sample(n);
            for c in 0..s.c {
                for i in c * plane..(c + 1) * plane {
                    sum_dy[c] += g[i];
                    sum_dy_xhat[c] += g[i] * xh[i];
                }
            }
        }
        for c in 0..s.c {
            state.affine.weight_grad.data_mut()[c] += sum_dy_xhat[c];
            state.affine.bias_grad[c] += sum_dy[c];
        }

        let scale = state.affine.weight.data();
        let mut grad_in = Tensor::zeros(s);
        for n in 0..s.n {
            let g = grad_out.sample(n);
            let xh = cache.x_hat.sample(n);
            let dst = grad_in.sample_mut(n);
            for c in 0..s.c {
                let k = scale[c] * cache.inv_std[c];
                match cache.mode {
                    Mode::Training => {
                        let mean_dy = sum_dy[c] / m;
                        let mean_dy_xhat = sum_dy_xhat[c] / m;
                        for i in c * plane..(c + 1) * plane {
                            dst[i] = k * (g[i] - mean_dy - xh[i] * mean_dy_xhat);
                        }
                    }
                    Mode::Inference => {
                        for i in c * plane..(c + 1) * plane {
                            dst[i] = k * g[i];
                        }
                    }
                }
            }
        }
        Ok(grad_in)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_standardization() {
        let x = Tensor::from_vec(Shape::new(2, 1, 1, 1), vec![1.0, 3.0]).unwrap();
        let mut st = BatchNormState::new(1);
        st.eps = 0.0;
        let (y, _) = BatchNorm::forward(&x, &st, Mode::Training).unwrap();
        assert_eq!(y.data(), &[-1.0, 1.0]);
    }

    #[test]
    fn affine_on_normalized_data() {
        // Inference with running stats (0, 1) and eps 0 is the bare affine map.
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![-1.0, 0.5, 2.0]).unwrap();
        let mut st = BatchNormState::new(1);
        st.eps = 0.0;
        st.affine.weight.data_mut()[0] = 2.0;
        st.affine.bias[0] = 5.0;
        let (y, _) = BatchNorm::forward(&x, &st, Mode::Inference).unwrap();
        assert_eq!(y.data(), &[3.0, 6.0, 9.0]);
    }

    #[test]
    fn training_output_is_standardized_per_channel() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(9);
        let x = Tensor::randn(Shape::new(3, 2, 4, 5), 3.0, &mut rng);
        let st = BatchNormState::new(2);
        let (y, _) = BatchNorm::forward(&x, &st, Mode::Training).unwrap();
        for c in 0..2 {
            let vals: Vec<f64> = (0..3)
                .flat_map(|n| (0..20).map(move |i| (n, i)))
                .map(|(n, i)| y.at(n, c, i / 5, i % 5))
                .collect();
            let mean = vals.iter().sum::<f64>() / 60.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 60.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn single_value_population_is_rejected() {
        let x = Tensor::zeros(Shape::new(1, 2, 1, 1));
        let st = BatchNormState::new(2);
        assert!(BatchNorm::forward(&x, &st, Mode::Training).is_err());
        assert!(BatchNorm::forward(&x, &st, Mode::Inference).is_ok());
    }

    #[test]
    fn running_stats_follow_ema_and_ignore_inference() {
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 4), vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        let mut st = BatchNormState::new(1);
        let (_, cache) = BatchNorm::forward(&x, &st, Mode::Training).unwrap();
        BatchNorm::update_running_stats(&mut st, &cache);
        assert!((st.running_mean[0] - 0.3).abs() < 1e-15);
        // unbiased var of {1,2,3,6} = 14/3
        assert!((st.running_var[0] - (0.9 + 0.1 * 14.0 / 3.0)).abs() < 1e-15);

        let before = st.clone();
        let (_, cache) = BatchNorm::forward(&x, &st, Mode::Inference).unwrap();
        BatchNorm::update_running_stats(&mut st, &cache);
        assert_eq!(st, before);
    }
}
