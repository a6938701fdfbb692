use rand::Rng;
use rayon::prelude::*;

use super::gemm::{gemm, Unfold};
use super::params::LayerParams;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub pad: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub const fn new(kernel: usize, pad: usize, stride: usize) -> Self {
        ConvGeometry {
            kernel,
            pad,
            stride,
        }
    }

    fn validate(&self, op: &'static str) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 {
            return Err(Error::invalid(op, "kernel and stride must be at least 1"));
        }
        Ok(())
    }

    /// `floor((len + 2·pad − kernel) / stride) + 1`, or `None` when the
    /// padded input is smaller than the kernel.
    pub fn output_len(&self, len: usize) -> Option<usize> {
        let padded = len + 2 * self.pad;
        (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
    }
}

/// Weight layout is (out_channels, in_channels, k, k).
fn conv_plan(
    op: &'static str,
    input: Shape,
    params: &LayerParams,
    geom: ConvGeometry,
) -> Result<(Shape, Unfold)> {
    geom.validate(op)?;
    let ws = params.weight.shape();
    if ws.c != input.c || ws.h != geom.kernel || ws.w != geom.kernel {
        return Err(Error::shape(
            op,
            format!("weight (*, {}, {k}, {k})", input.c, k = geom.kernel),
            format!("weight {ws}"),
        ));
    }
    if params.bias.len() != ws.n {
        return Err(Error::shape(
            op,
            format!("bias of length {}", ws.n),
            format!("bias of length {}", params.bias.len()),
        ));
    }
    let (out_h, out_w) = match (geom.output_len(input.h), geom.output_len(input.w)) {
        (Some(h), Some(w)) => (h, w),
        _ => {
            return Err(Error::shape(
                op,
                format!("spatial dims >= kernel {} after padding", geom.kernel),
                input,
            ))
        }
    };
    let unfold = Unfold {
        channels: input.c,
        h: input.h,
        w: input.w,
        kernel: geom.kernel,
        pad: geom.pad,
        stride: geom.stride,
        out_h,
        out_w,
    };
    Ok((Shape::new(input.n, ws.n, out_h, out_w), unfold))
}

fn is_pointwise(geom: ConvGeometry) -> bool {
    geom.kernel == 1 && geom.pad == 0 && geom.stride == 1
}

pub fn conv2d(input: &Tensor, params: &LayerParams, geom: ConvGeometry) -> Result<Tensor> {
    let (out_shape, unfold) = conv_plan("conv2d", input.shape(), params, geom)?;
    let mut out = Tensor::zeros(out_shape);
    let out_c = out_shape.c;
    let k_rows = unfold.rows();
    let ncols = unfold.cols();
    let weight = params.weight.data();
    let bias = &params.bias;
    let in_len = input.shape().sample_len();
    let out_len = out_shape.sample_len();

    out.data_mut()
        .par_chunks_mut(out_len.max(1))
        .zip(input.data().par_chunks(in_len.max(1)))
        .for_each(|(dst, src)| {
            let cols_buf;
            let cols: &[f64] = if is_pointwise(geom) {
                src
            } else {
                let mut buf = vec![0.0; k_rows * ncols];
                unfold.im2col(src, &mut buf);
                cols_buf = buf;
                &cols_buf
            };
            for (oc, plane) in dst.chunks_mut(ncols).enumerate() {
                plane.iter_mut().for_each(|v| *v = bias[oc]);
            }
            gemm(out_c, k_rows, ncols, weight, false, cols, false, 1.0, dst);
        });
    Ok(out)
}

/// Accumulates weight and bias gradients into `params` and returns the
/// gradient with respect to `input`.
pub fn conv2d_backward(
    input: &Tensor,
    params: &mut LayerParams,
    geom: ConvGeometry,
    grad_out: &Tensor,
) -> Result<Tensor> {
    let (out_shape, unfold) = conv_plan("conv2d_backward", input.shape(), params, geom)?;
    grad_out.ensure_shape("conv2d_backward", out_shape)?;
    let out_c = out_shape.c;
    let k_rows = unfold.rows();
    let ncols = unfold.cols();
    let in_len = input.shape().sample_len();
    let out_len = out_shape.sample_len();
    let weight = params.weight.data();

    // Per-sample partial parameter gradients, reduced below in sample order
    // so the result does not depend on the worker count.
    let partials: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..out_shape.n)
        .into_par_iter()
        .map(|s| {
            let src = &input.data()[s * in_len..(s + 1) * in_len];
            let g = &grad_out.data()[s * out_len..(s + 1) * out_len];
            let cols_buf;
            let cols: &[f64] = if is_pointwise(geom) {
                src
            } else {
                let mut buf = vec![0.0; k_rows * ncols];
                unfold.im2col(src, &mut buf);
                cols_buf = buf;
                &cols_buf
            };
            let mut dw = vec![0.0; out_c * k_rows];
            gemm(out_c, ncols, k_rows, g, false, cols, true, 0.0, &mut dw);
            let db: Vec<f64> = g.chunks(ncols).map(|p| p.iter().sum()).collect();

            let mut dcols = vec![0.0; k_rows * ncols];
            gemm(
                k_rows, out_c, ncols, weight, true, g, false, 0.0, &mut dcols,
            );
            let dx = if is_pointwise(geom) {
                dcols
            } else {
                let mut dx = vec![0.0; in_len];
                unfold.col2im(&dcols, &mut dx);
                dx
            };
            (dw, db, dx)
        })
        .collect();

    let mut grad_in = Tensor::zeros(input.shape());
    for (s, (dw, db, dx)) in partials.into_iter().enumerate() {
        for (a, b) in params.weight_grad.data_mut().iter_mut().zip(&dw) {
            *a += b;
        }
        for (a, b) in params.bias_grad.iter_mut().zip(&db) {
            *a += b;
        }
        grad_in.sample_mut(s).copy_from_slice(&dx);
    }
    Ok(grad_in)
}

/// Convolution layer owning its parameters and geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub params: LayerParams,
    pub geom: ConvGeometry,
}

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, geom: ConvGeometry) -> Self {
        Conv2d {
            params: LayerParams::zeros(
                Shape::new(out_channels, in_channels, geom.kernel, geom.kernel),
                out_channels,
            ),
            geom,
        }
    }

    /// He-normal weights (std = sqrt(2 / fan_in)), zero bias.
    pub fn he_init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let shape = self.params.weight.shape();
        let fan_in = shape.c * shape.h * shape.w;
        self.params.weight = Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), rng);
        self.params.bias.iter_mut().for_each(|b| *b = 0.0);
    }

    pub fn in_channels(&self) -> usize {
        self.params.weight.shape().c
    }

    pub fn out_channels(&self) -> usize {
        self.params.weight.shape().n
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        conv2d(input, &self.params, self.geom)
    }

    pub fn backward(&mut self, input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        conv2d_backward(input, &mut self.params, self.geom, grad_out)
    }
}
