use crate::error::Result;
use crate::tensor::Tensor;

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Gradient passes only where the forward input was strictly positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    grad_out.ensure_shape("relu_backward", input.shape())?;
    let mut g = grad_out.clone();
    for (d, &x) in g.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *d = 0.0;
        }
    }
    Ok(g)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    b.ensure_shape("add", a.shape())?;
    let mut out = a.clone();
    out.add_assign(b);
    Ok(out)
}

/// Both summands receive the upstream gradient unchanged.
pub fn add_backward(grad_out: &Tensor) -> (Tensor, Tensor) {
    (grad_out.clone(), grad_out.clone())
}
