use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Flat input index of each output's winning element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    pub input_shape: Shape,
    pub argmax: Vec<usize>,
}

/// 2×2 max pooling with stride 2. Ties go to the first element of the window
/// in row-major order.
pub fn maxpool2(input: &Tensor) -> Result<(Tensor, PoolIndices)> {
    let s = input.shape();
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::shape("maxpool2", "even spatial dims", s));
    }
    let (oh, ow) = (s.h / 2, s.w / 2);
    let out_shape = Shape::new(s.n, s.c, oh, ow);
    let mut out = Tensor::zeros(out_shape);
    let mut argmax = vec![0usize; out_shape.len()];
    let x = input.data();
    let mut o = 0;
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * s.plane();
            for y in 0..oh {
                for xo in 0..ow {
                    let mut best = base + 2 * y * s.w + 2 * xo;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * y + dy) * s.w + 2 * xo + dx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    out.data_mut()[o] = x[best];
                    argmax[o] = best;
                    o += 1;
                }
            }
        }
    }
    Ok((
        out,
        PoolIndices {
            input_shape: s,
            argmax,
        },
    ))
}

pub fn maxpool2_backward(indices: &PoolIndices, grad_out: &Tensor) -> Result<Tensor> {
    let s = indices.input_shape;
    grad_out.ensure_shape("maxpool2_backward", Shape::new(s.n, s.c, s.h / 2, s.w / 2))?;
    let mut g = Tensor::zeros(s);
    let dst = g.data_mut();
    for (&i, &v) in indices.argmax.iter().zip(grad_out.data()) {
        dst[i] += v;
    }
    Ok(g)
}
