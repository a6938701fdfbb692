use crate::error::{Error, Result};
use crate::masks::{BinaryMask, ClassWeights};
use crate::tensor::{Shape, Tensor};

/// Class-weighted two-class softmax cross-entropy averaged over every pixel of
/// the batch. `labels` holds one value per pixel in (n, h, w) order and must
/// be 0 (authentic) or 1 (spliced).
pub fn weighted_softmax_ce_labels(
    logits: &Tensor,
    labels: &[u8],
    weights: ClassWeights,
) -> Result<(f64, Tensor)> {
    let s = logits.shape();
    if s.c != 2 {
        return Err(Error::shape("weighted_softmax_ce", "2 channels", s));
    }
    let count = s.n * s.plane();
    if labels.len() != count {
        return Err(Error::shape(
            "weighted_softmax_ce",
            format!("{count} labels"),
            format!("{} labels", labels.len()),
        ));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::invalid(
            "weighted_softmax_ce",
            format!("target value {bad} outside {{0, 1}}"),
        ));
    }
    weights.validate()?;
    let w = [weights.authentic, weights.spliced];
    let plane = s.plane();
    let inv = 1.0 / count as f64;

    let mut grad = Tensor::zeros(s);
    let mut total = 0.0;
    for n in 0..s.n {
        let z = logits.sample(n);
        let g = grad.sample_mut(n);
        for p in 0..plane {
            let (z0, z1) = (z[p], z[plane + p]);
            let t = labels[n * plane + p] as usize;
            let m = z0.max(z1);
            let (e0, e1) = ((z0 - m).exp(), (z1 - m).exp());
            let sum = e0 + e1;
            let lse = m + sum.ln();
            let zt = if t == 0 { z0 } else { z1 };
            total += w[t] * (lse - zt);
            let (p0, p1) = (e0 / sum, e1 / sum);
            let scale = w[t] * inv;
            g[p] = scale * (p0 - if t == 0 { 1.0 } else { 0.0 });
            g[plane + p] = scale * (p1 - if t == 1 { 1.0 } else { 0.0 });
        }
    }
    Ok((total * inv, grad))
}

pub fn weighted_softmax_ce(
    logits: &Tensor,
    targets: &[BinaryMask],
    weights: ClassWeights,
) -> Result<(f64, Tensor)> {
    let s = logits.shape();
    if targets.len() != s.n {
        return Err(Error::shape(
            "weighted_softmax_ce",
            format!("{} target masks", s.n),
            format!("{} target masks", targets.len()),
        ));
    }
    let mut labels = Vec::with_capacity(s.n * s.plane());
    for t in targets {
        if (t.height(), t.width()) != (s.h, s.w) {
            return Err(Error::shape(
                "weighted_softmax_ce",
                Shape::new(1, 1, s.h, s.w),
                Shape::new(1, 1, t.height(), t.width()),
            ));
        }
        labels.extend(t.values().iter().map(|&v| v as u8));
    }
    weighted_softmax_ce_labels(logits, &labels, weights)
}
