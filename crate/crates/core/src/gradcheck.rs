//! Central finite-difference checks of every analytic backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::layers::{
    add, add_backward, conv2d, conv2d_backward, maxpool2, maxpool2_backward, relu, relu_backward,
    transposed_conv, transposed_conv_backward, weighted_softmax_ce_labels, BatchNorm,
    BatchNormState, ConvGeometry, LayerParams, Mode,
};
use crate::masks::{BinaryMask, ClassWeights};
use crate::model::{Heads, Model, ModelConfig, TrainBatch};
use crate::tensor::{Shape, Tensor};

pub const FD_EPSILON: f64 = 1e-5;
pub const LAYER_TOLERANCE: f64 = 1e-4;
pub const END_TO_END_TOLERANCE: f64 = 1e-3;
/// Gradients smaller than this are compared on an absolute scale.
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

/// Compares `analytic` against `(f(x+ε) − f(x−ε)) / 2ε` at each index in
/// `indices` (all coordinates when `None`). `values` is restored afterwards.
pub fn finite_diff_check<F>(
    values: &mut [f64],
    analytic: &[f64],
    indices: Option<&[usize]>,
    epsilon: f64,
    tolerance: f64,
    mut f: F,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(values.len(), analytic.len());
    let all: Vec<usize>;
    let indices = match indices {
        Some(ix) => ix,
        None => {
            all = (0..values.len()).collect();
            &all
        }
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: indices.len(),
        tolerance,
    };
    for &i in indices {
        let orig = values[i];
        values[i] = orig + epsilon;
        let plus = f(values);
        values[i] = orig - epsilon;
        let minus = f(values);
        values[i] = orig;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_rel_error || (i == indices[0] && err == 0.0) {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic = analytic[i];
            report.numeric = numeric;
        }
    }
    report
}

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub layer: &'static str,
    pub target: &'static str,
    pub report: GradCheckReport,
}

fn entry(layer: &'static str, target: &'static str, report: GradCheckReport) -> SuiteEntry {
    SuiteEntry {
        layer,
        target,
        report,
    }
}

fn random_params(w: Shape, bias: usize, rng: &mut ChaCha8Rng) -> LayerParams {
    let b = (0..bias).map(|_| rng.random_range(-0.5..0.5)).collect();
    LayerParams::new(Tensor::randn(w, 0.5, rng), b)
}

/// Resamples entries closer than `margin` to zero so kinks stay out of reach
/// of the finite-difference stencil.
fn away_from_zero(t: &mut Tensor, margin: f64) {
    for v in t.data_mut() {
        if v.abs() < margin {
            *v = if *v < 0.0 {
                -margin - v.abs()
            } else {
                margin + v.abs()
            };
        }
    }
}

fn check_conv(rng: &mut ChaCha8Rng, geom: ConvGeometry, out: &mut Vec<SuiteEntry>) -> Result<()> {
    let x = Tensor::randn(Shape::new(2, 3, 8, 8), 1.0, rng);
    let mut p = random_params(Shape::new(4, 3, geom.kernel, geom.kernel), 4, rng);
    let y = conv2d(&x, &p, geom)?;
    let r = Tensor::randn(y.shape(), 1.0, rng);
    let gx = conv2d_backward(&x, &mut p, geom, &r)?;
    let (eps, tol) = (FD_EPSILON, LAYER_TOLERANCE);

    let mut xv = x.data().to_vec();
    let rep = finite_diff_check(&mut xv, gx.data(), None, eps, tol, |v| {
        let t = Tensor::from_vec(x.shape(), v.to_vec()).unwrap();
        conv2d(&t, &p, geom).unwrap().dot(&r)
    });
    out.push(entry("conv2d", "input", rep));

    let mut wv = p.weight.data().to_vec();
    let wg = p.weight_grad.data().to_vec();
    let rep = finite_diff_check(&mut wv, &wg, None, eps, tol, |v| {
        let mut q = p.clone();
        q.weight.data_mut().copy_from_slice(v);
        conv2d(&x, &q, geom).unwrap().dot(&r)
    });
    out.push(entry("conv2d", "weight", rep));

    let mut bv = p.bias.clone();
    let bg = p.bias_grad.clone();
    let rep = finite_diff_check(&mut bv, &bg, None, eps, tol, |v| {
        let mut q = p.clone();
        q.bias.copy_from_slice(v);
        conv2d(&x, &q, geom).unwrap().dot(&r)
    });
    out.push(entry("conv2d", "bias", rep));
    Ok(())
}

fn check_batchnorm(rng: &mut ChaCha8Rng, mode: Mode, out: &mut Vec<SuiteEntry>) -> Result<()> {
    let name = match mode {
        Mode::Training => "batchnorm",
        Mode::Inference => "batchnorm-inference",
    };
    let x = Tensor::randn(Shape::new(2, 3, 4, 4), 2.0, rng);
    let mut st = BatchNormState::new(3);
    for c in 0..3 {
        st.affine.weight.data_mut()[c] = rng.random_range(0.5..2.0);
        st.affine.bias[c] = rng.random_range(-1.0..1.0);
        st.running_mean[c] = rng.random_range(-0.5..0.5);
        st.running_var[c] = rng.random_range(0.5..2.0);
    }
    let (y, cache) = BatchNorm::forward(&x, &st, mode)?;
    let r = Tensor::randn(y.shape(), 1.0, rng);
    let gx = BatchNorm::backward(&mut st, &cache, &r)?;
    let (eps, tol) = (FD_EPSILON, LAYER_TOLERANCE);
    let eval = |x: &Tensor, s: &BatchNormState| BatchNorm::forward(x, s, mode).unwrap().0.dot(&r);

    let mut xv = x.data().to_vec();
    let rep = finite_diff_check(&mut xv, gx.data(), None, eps, tol, |v| {
        eval(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap(), &st)
    });
    out.push(entry(name, "input", rep));

    let mut sv = st.affine.weight.data().to_vec();
    let sg = st.affine.weight_grad.data().to_vec();
    let rep = finite_diff_check(&mut sv, &sg, None, eps, tol, |v| {
        let mut s = st.clone();
        s.affine.weight.data_mut().copy_from_slice(v);
        eval(&x, &s)
    });
    out.push(entry(name, "scale", rep));

    let mut hv = st.affine.bias.clone();
    let hg = st.affine.bias_grad.clone();
    let rep = finite_diff_check(&mut hv, &hg, None, eps, tol, |v| {
        let mut s = st.clone();
        s.affine.bias.copy_from_slice(v);
        eval(&x, &s)
    });
    out.push(entry(name, "shift", rep));
    Ok(())
}

fn check_transposed(rng: &mut ChaCha8Rng, factor: usize, out: &mut Vec<SuiteEntry>) -> Result<()> {
    let name = if factor == 2 {
        "transposed_conv x2"
    } else {
        "transposed_conv x8"
    };
    let side = if factor == 2 { 4 } else { 2 };
    let x = Tensor::randn(Shape::new(2, 2, side, side), 1.0, rng);
    let k = 2 * factor;
    let mut p = random_params(Shape::new(2, 3, k, k), 3, rng);
    let y = transposed_conv(&x, &p, factor)?;
    let r = Tensor::randn(y.shape(), 1.0, rng);
    let gx = transposed_conv_backward(&x, &mut p, factor, &r)?;
    let (eps, tol) = (FD_EPSILON, LAYER_TOLERANCE);

    let mut xv = x.data().to_vec();
    let rep = finite_diff_check(&mut xv, gx.data(), None, eps, tol, |v| {
        let t = Tensor::from_vec(x.shape(), v.to_vec()).unwrap();
        transposed_conv(&t, &p, factor).unwrap().dot(&r)
    });
    out.push(entry(name, "input", rep));

    let mut wv = p.weight.data().to_vec();
    let wg = p.weight_grad.data().to_vec();
    let rep = finite_diff_check(&mut wv, &wg, None, eps, tol, |v| {
        let mut q = p.clone();
        q.weight.data_mut().copy_from_slice(v);
        transposed_conv(&x, &q, factor).unwrap().dot(&r)
    });
    out.push(entry(name, "weight", rep));

    let mut bv = p.bias.clone();
    let bg = p.bias_grad.clone();
    let rep = finite_diff_check(&mut bv, &bg, None, eps, tol, |v| {
        let mut q = p.clone();
        q.bias.copy_from_slice(v);
        transposed_conv(&x, &q, factor).unwrap().dot(&r)
    });
    out.push(entry(name, "bias", rep));
    Ok(())
}

/// Finite-difference checks of each layer type in isolation, each against the
/// scalar objective `⟨layer(x), r⟩` for a random probe `r`.
pub fn layer_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let (eps, tol) = (FD_EPSILON, LAYER_TOLERANCE);

    check_conv(&mut rng, ConvGeometry::new(3, 1, 1), &mut out)?;
    let mut strided = Vec::new();
    check_conv(&mut rng, ConvGeometry::new(3, 1, 2), &mut strided)?;
    out.extend(strided.into_iter().map(|e| SuiteEntry {
        layer: "conv2d stride 2",
        ..e
    }));
    check_batchnorm(&mut rng, Mode::Training, &mut out)?;
    check_batchnorm(&mut rng, Mode::Inference, &mut out)?;

    // relu
    let mut x = Tensor::randn(Shape::new(2, 3, 5, 5), 1.0, &mut rng);
    away_from_zero(&mut x, 1e-3);
    let r = Tensor::randn(x.shape(), 1.0, &mut rng);
    let gx = relu_backward(&x, &r)?;
    let mut xv = x.data().to_vec();
    let rep = finite_diff_check(&mut xv, gx.data(), None, eps, tol, |v| {
        relu(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap()).dot(&r)
    });
    out.push(entry("relu", "input", rep));

    // maxpool
    let x = Tensor::randn(Shape::new(1, 2, 6, 6), 1.0, &mut rng);
    let (y, idx) = maxpool2(&x)?;
    let r = Tensor::randn(y.shape(), 1.0, &mut rng);
    let gx = maxpool2_backward(&idx, &r)?;
    let mut xv = x.data().to_vec();
    let rep = finite_diff_check(&mut xv, gx.data(), None, eps, tol, |v| {
        maxpool2(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap())
            .unwrap()
            .0
            .dot(&r)
    });
    out.push(entry("maxpool2", "input", rep));

    check_transposed(&mut rng, 2, &mut out)?;
    check_transposed(&mut rng, 8, &mut out)?;

    // add
    let a = Tensor::randn(Shape::new(1, 2, 3, 3), 1.0, &mut rng);
    let b = Tensor::randn(a.shape(), 1.0, &mut rng);
    let r = Tensor::randn(a.shape(), 1.0, &mut rng);
    let (ga, _) = add_backward(&r);
    let mut av = a.data().to_vec();
    let rep = finite_diff_check(&mut av, ga.data(), None, eps, tol, |v| {
        add(&Tensor::from_vec(a.shape(), v.to_vec()).unwrap(), &b)
            .unwrap()
            .dot(&r)
    });
    out.push(entry("add", "input", rep));

    // weighted softmax cross-entropy
    let z = Tensor::randn(Shape::new(2, 2, 3, 3), 2.0, &mut rng);
    let labels: Vec<u8> = (0..18).map(|_| rng.random_range(0..2)).collect();
    let weights = ClassWeights::new(0.5556, 5.0)?;
    let (_, gz) = weighted_softmax_ce_labels(&z, &labels, weights)?;
    let mut zv = z.data().to_vec();
    let rep = finite_diff_check(&mut zv, gz.data(), None, eps, tol, |v| {
        let t = Tensor::from_vec(z.shape(), v.to_vec()).unwrap();
        weighted_softmax_ce_labels(&t, &labels, weights).unwrap().0
    });
    out.push(entry("softmax_ce", "logits", rep));
    Ok(out)
}

pub fn tiny_config(heads: Heads) -> ModelConfig {
    ModelConfig {
        block_widths: vec![2; 5],
        convs_per_block: 2,
        heads,
        input_h: 32,
        input_w: 32,
    }
}

/// A two-sample batch of random images with a random rectangle as the
/// surface label.
pub fn random_batch(config: &ModelConfig, rng: &mut ChaCha8Rng) -> TrainBatch {
    let (h, w) = (config.input_h, config.input_w);
    let images = Tensor::randn(Shape::new(2, 3, h, w), 0.5, rng);
    let surface: Vec<BinaryMask> = (0..2)
        .map(|_| {
            let (y0, x0) = (rng.random_range(0..h / 2), rng.random_range(0..w / 2));
            let (sh, sw) = (rng.random_range(4..h / 2), rng.random_range(4..w / 2));
            BinaryMask::from_fn(h, w, |y, x| {
                (y0..y0 + sh).contains(&y) && (x0..x0 + sw).contains(&x)
            })
        })
        .collect();
    let edge = config.heads.has_edge().then(|| {
        surface
            .iter()
            .map(|m| crate::masks::derive_edge_label(m, 1))
            .collect()
    });
    TrainBatch {
        images,
        surface,
        edge,
    }
}

/// Gradient of the total loss of a tiny multi-task network with respect to
/// every parameter, checked parameter set by parameter set. Reported per
/// layer kind: encoder conv, batchnorm, score conv, upsampling.
pub fn end_to_end_check(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = tiny_config(Heads::SurfaceEdge);
    let mut model = Model::build(config.clone(), seed)?;
    model.randomize_scores(seed ^ 0x5eed);
    let batch = random_batch(&config, &mut rng);
    let ws = ClassWeights::new(0.6, 3.0)?;
    let we = ClassWeights::new(0.55, 6.0)?;

    model.zero_grad();
    model.compute_gradients(&batch, ws, we)?;

    let mut names = Vec::new();
    model.visit_params(|name, _| names.push(name.to_string()));
    let mut worst: Vec<(&'static str, GradCheckReport)> = Vec::new();
    for name in &names {
        let kind = if name.ends_with(".conv") {
            "end-to-end encoder conv"
        } else if name.ends_with(".bn") {
            "end-to-end batchnorm"
        } else if name.contains("score") {
            "end-to-end score conv"
        } else {
            "end-to-end upsampling"
        };
        for part in ["weight", "bias"] {
            let (mut values, grads) = {
                let mut found = None;
                model.visit_params(|n, p| {
                    if n == name {
                        found = Some(match part {
                            "weight" => (p.weight.data().to_vec(), p.weight_grad.data().to_vec()),
                            _ => (p.bias.clone(), p.bias_grad.clone()),
                        });
                    }
                });
                found.expect("parameter visited")
            };
            let mut probe = model.clone();
            let rep = finite_diff_check(
                &mut values,
                &grads,
                None,
                FD_EPSILON,
                END_TO_END_TOLERANCE,
                |v| {
                    probe.visit_params_mut(|n, p| {
                        if n == name {
                            match part {
                                "weight" => p.weight.data_mut().copy_from_slice(v),
                                _ => p.bias.copy_from_slice(v),
                            }
                        }
                    });
                    probe
                        .evaluate_loss(&batch, ws, we)
                        .expect("forward on valid batch")
                        .total
                },
            );
            match worst.iter_mut().find(|(k, _)| *k == kind) {
                Some((_, r)) => {
                    if rep.max_rel_error > r.max_rel_error {
                        *r = GradCheckReport {
                            checked: r.checked + rep.checked,
                            ..rep
                        };
                    } else {
                        r.checked += rep.checked;
                    }
                }
                None => worst.push((kind, rep)),
            }
        }
    }
    Ok(worst
        .into_iter()
        .map(|(layer, report)| entry(layer, "total loss", report))
        .collect())
}
