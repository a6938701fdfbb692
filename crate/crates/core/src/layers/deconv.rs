//! Learned upsampling by transposed convolution (kernel 2f, stride f,
//! crop f/2), initialized to bilinear interpolation.

use rayon::prelude::*;

use super::gemm::{gemm, Unfold};
use super::params::LayerParams;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

fn check_factor(op: &'static str, factor: usize) -> Result<()> {
    match factor {
        2 | 8 => Ok(()),
        f => Err(Error::invalid(
            op,
            format!("unsupported upsampling factor {f} (expected 2 or 8)"),
        )),
    }
}

/// Separable bilinear kernel of size 2·factor, as used for FCN upsampling.
pub fn bilinear_kernel(factor: usize) -> Vec<f64> {
    let size = 2 * factor;
    let center = factor as f64 - 0.5;
    let line: Vec<f64> = (0..size)
        .map(|i| 1.0 - (i as f64 - center).abs() / factor as f64)
        .collect();
    let mut k = Vec::with_capacity(size * size);
    for a in &line {
        for b in &line {
            k.push(a * b);
        }
    }
    k
}

/// Weight layout is (in_channels, out_channels, k, k). The layer is the
/// adjoint of a stride-`factor` convolution from the output grid to the input
/// grid, so the same [`Unfold`] drives both directions.
fn plan(
    op: &'static str,
    input: Shape,
    params: &LayerParams,
    factor: usize,
) -> Result<(Shape, Unfold)> {
    check_factor(op, factor)?;
    let k = 2 * factor;
    let ws = params.weight.shape();
    if ws.n != input.c || ws.h != k || ws.w != k {
        return Err(Error::shape(
            op,
            format!("weight ({}, *, {k}, {k})", input.c),
            format!("weight {ws}"),
        ));
    }
    if params.bias.len() != ws.c {
        return Err(Error::shape(
            op,
            format!("bias of length {}", ws.c),
            format!("bias of length {}", params.bias.len()),
        ));
    }
    let out = Shape::new(input.n, ws.c, input.h * factor, input.w * factor);
    let unfold = Unfold {
        channels: ws.c,
        h: out.h,
        w: out.w,
        kernel: k,
        pad: factor / 2,
        stride: factor,
        out_h: input.h,
        out_w: input.w,
    };
    Ok((out, unfold))
}

pub fn transposed_conv(input: &Tensor, params: &LayerParams, factor: usize) -> Result<Tensor> {
    let (out_shape, unfold) = plan("transposed_conv", input.shape(), params, factor)?;
    let in_c = input.shape().c;
    let rows = unfold.rows();
    let ncols = unfold.cols();
    let in_len = input.shape().sample_len();
    let out_len = out_shape.sample_len();
    let plane = out_shape.plane();
    let weight = params.weight.data();
    let bias = &params.bias;

    let mut out = Tensor::zeros(out_shape);
    out.data_mut()
        .par_chunks_mut(out_len.max(1))
        .zip(input.data().par_chunks(in_len.max(1)))
        .for_each(|(dst, src)| {
            let mut cols = vec![0.0; rows * ncols];
            gemm(rows, in_c, ncols, weight, true, src, false, 0.0, &mut cols);
            for (oc, p) in dst.chunks_mut(plane).enumerate() {
                p.iter_mut().for_each(|v| *v = bias[oc]);
            }
            unfold.col2im(&cols, dst);
        });
    Ok(out)
}

pub fn transposed_conv_backward(
    input: &Tensor,
    params: &mut LayerParams,
    factor: usize,
    grad_out: &Tensor,
) -> Result<Tensor> {
    let (out_shape, unfold) = plan("transposed_conv_backward", input.shape(), params, factor)?;
    grad_out.ensure_shape("transposed_conv_backward", out_shape)?;
    let in_c = input.shape().c;
    let rows = unfold.rows();
    let ncols = unfold.cols();
    let in_len = input.shape().sample_len();
    let out_len = out_shape.sample_len();
    let plane = out_shape.plane();
    let weight = params.weight.data();

    let partials: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..out_shape.n)
        .into_par_iter()
        .map(|s| {
            let x = &input.data()[s * in_len..(s + 1) * in_len];
            let g = &grad_out.data()[s * out_len..(s + 1) * out_len];
            let mut gcols = vec![0.0; rows * ncols];
            unfold.im2col(g, &mut gcols);
            let mut dx = vec![0.0; in_len];
            gemm(
                in_c, rows, ncols, weight, false, &gcols, false, 0.0, &mut dx,
            );
            let mut dw = vec![0.0; in_c * rows];
            gemm(in_c, ncols, rows, x, false, &gcols, true, 0.0, &mut dw);
            let db: Vec<f64> = g.chunks(plane).map(|p| p.iter().sum()).collect();
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

#[derive(Debug, Clone, PartialEq)]
pub struct TransposedConv {
    pub params: LayerParams,
    pub factor: usize,
}

impl TransposedConv {
    pub fn new(in_channels: usize, out_channels: usize, factor: usize) -> Result<Self> {
        check_factor("TransposedConv::new", factor)?;
        let k = 2 * factor;
        Ok(TransposedConv {
            params: LayerParams::zeros(Shape::new(in_channels, out_channels, k, k), out_channels),
            factor,
        })
    }

    /// Channel-diagonal bilinear weights and zero bias.
    pub fn bilinear_init(&mut self) {
        let shape = self.params.weight.shape();
        let kernel = bilinear_kernel(self.factor);
        let kk = kernel.len();
        let w = self.params.weight.data_mut();
        w.iter_mut().for_each(|v| *v = 0.0);
        for c in 0..shape.n.min(shape.c) {
            let off = (c * shape.c + c) * kk;
            w[off..off + kk].copy_from_slice(&kernel);
        }
        self.params.bias.iter_mut().for_each(|b| *b = 0.0);
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        transposed_conv(input, &self.params, self.factor)
    }

    pub fn backward(&mut self, input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        transposed_conv_backward(input, &mut self.params, self.factor, grad_out)
    }
}
