//! Central finite differences in f64 against the graph's backward pass.

use std::rc::Rc;

use vsrpp_core::{Graph, Result, Tensor, Var};

use super::rng;

pub type Build<'a> = dyn Fn(&Graph<f64>, &[Var<f64>]) -> Result<Var<f64>> + 'a;

pub const FD_STEP: f64 = 1e-4;
pub const BLOCK_FD_STEP: f64 = 1e-6;

fn weighted_sum(out: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// For `L = sum(f(inputs) ⊙ R)` with a fixed random `R`, returns for every
/// input `max |analytic − numeric| / max |numeric|`.
pub fn gradient_errors(inputs: &[(&str, Tensor<f64>)], f: &Build<'_>, seed: u64) -> Vec<(String, f64)> {
    gradient_errors_with_step(inputs, f, seed, FD_STEP)
}

pub fn gradient_errors_with_step(
    inputs: &[(&str, Tensor<f64>)],
    f: &Build<'_>,
    seed: u64,
    step: f64,
) -> Vec<(String, f64)> {
    let probe = {
        let g = Graph::no_grad();
        let vars: Vec<Var<f64>> = inputs.iter().map(|(_, t)| g.constant(t.clone())).collect();
        f(&g, &vars).unwrap().into_tensor()
    };
    let mut r = rng(seed ^ 0xfeed);
    let weights: Tensor<f64> = Tensor::uniform(probe.shape(), -1.0, 1.0, &mut r);
    let loss_of = |ts: &[Tensor<f64>]| -> f64 {
        let g = Graph::no_grad();
        let vars: Vec<Var<f64>> = ts.iter().map(|t| g.constant(t.clone())).collect();
        weighted_sum(f(&g, &vars).unwrap().value(), &weights)
    };
    let analytic = {
        let g = Graph::new();
        let vars: Vec<Var<f64>> = inputs
            .iter()
            .map(|(n, t)| g.leaf(n, Rc::new(t.clone()), true))
            .collect();
        let out = f(&g, &vars).unwrap();
        let rv = g.constant(weights.clone());
        let loss = g.sum(&g.mul(&out, &rv).unwrap()).unwrap();
        g.backward(&loss).unwrap()
    };
    let base: Vec<Tensor<f64>> = inputs.iter().map(|(_, t)| t.clone()).collect();
    inputs
        .iter()
        .enumerate()
        .map(|(k, (name, t))| {
            let grad = analytic.get(name).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()));
            let mut num = vec![0.0; t.numel()];
            for (i, slot) in num.iter_mut().enumerate() {
                let mut plus = base.clone();
                plus[k].data_mut()[i] += step;
                let mut minus = base.clone();
                minus[k].data_mut()[i] -= step;
                *slot = (loss_of(&plus) - loss_of(&minus)) / (2.0 * step);
            }
            let scale = num.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let diff = num
                .iter()
                .zip(grad.data())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            (name.to_string(), if scale == 0.0 { diff } else { diff / scale })
        })
        .collect()
}

/// Moves values away from `0` (the ReLU kinks).
pub fn away_from_zero(t: &mut Tensor<f64>, margin: f64) {
    for v in t.data_mut() {
        if v.abs() < margin {
            *v = if *v < 0.0 { -margin } else { margin };
        }
    }
}

/// Moves values so their fractional part lies in `[margin, 1 − margin]`,
/// away from the bilinear kinks at integer positions.
pub fn away_from_integers(t: &mut Tensor<f64>, margin: f64) {
    for v in t.data_mut() {
        let frac = *v - v.floor();
        if frac < margin {
            *v = v.floor() + margin;
        } else if frac > 1.0 - margin {
            *v = v.floor() + 1.0 - margin;
        }
    }
}

use rand::RngExt;
use vsrpp_core::align::FlowGuidedAlignment;
use vsrpp_core::net::layers::Ctx;
use vsrpp_core::net::AlignmentMode;
use vsrpp_core::{ConvSpec, ModelWeights};

/// One gradient comparison: op, input, relative error, tolerance.
#[derive(Debug, Clone)]
pub struct GradResult {
    pub op: &'static str,
    pub input: String,
    pub err: f64,
    pub tol: f64,
}

pub const TOL: f64 = 1e-4;
pub const OFFSET_TOL: f64 = 1e-3;

fn t(shape: &[usize], lo: f64, hi: f64, r: &mut impl rand::Rng) -> Tensor<f64> {
    Tensor::uniform(shape, lo, hi, r)
}

fn collect(op: &'static str, errs: Vec<(String, f64)>, tol_for: impl Fn(&str) -> f64) -> Vec<GradResult> {
    errs.into_iter()
        .map(|(input, err)| GradResult {
            op,
            tol: tol_for(&input),
            input,
            err,
        })
        .collect()
}

/// Every differentiable graph op checked once with inputs drawn from `seed`.
pub fn op_cases(seed: u64) -> Vec<GradResult> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    let plain = |_: &str| TOL;

    // conv2d, loss sum(conv(x, w)²)/2 as well as the weighted sum.
    let stride = r.random_range(1..=2);
    let spec = ConvSpec {
        stride,
        ..ConvSpec::same(2, 3, 3)
    };
    let inputs = [
        ("x", t(&[1, 2, 5, 4], -1.0, 1.0, &mut r)),
        ("w", t(&[3, 2, 3, 3], -1.0, 1.0, &mut r)),
        ("b", t(&[3], -1.0, 1.0, &mut r)),
    ];
    out.extend(collect(
        "conv2d",
        gradient_errors(&inputs, &|g, v| g.conv2d(&v[0], &v[1], Some(&v[2]), &spec), seed),
        plain,
    ));
    out.extend(collect(
        "conv2d_squared",
        gradient_errors(
            &inputs,
            &|g, v| {
                let y = g.conv2d(&v[0], &v[1], Some(&v[2]), &spec)?;
                g.scale(&g.mul(&y, &y)?, 0.5)
            },
            seed,
        ),
        plain,
    ));

    // deform_conv2d
    let groups = r.random_range(1..=2);
    let dspec = ConvSpec::same(2 * groups, 2, 3);
    let mut off = t(&[1, groups * 18, 4, 5], -2.0, 2.0, &mut r);
    away_from_integers(&mut off, 0.05);
    let inputs = [
        ("x", t(&[1, 2 * groups, 4, 5], -1.0, 1.0, &mut r)),
        ("w", t(&dspec.weight_shape(), -1.0, 1.0, &mut r)),
        ("b", t(&[2], -1.0, 1.0, &mut r)),
        ("offsets", off),
        ("masks", t(&[1, groups * 9, 4, 5], 0.1, 0.9, &mut r)),
    ];
    out.extend(collect(
        "deform_conv2d",
        gradient_errors(
            &inputs,
            &|g, v| g.deform_conv2d(&v[0], &v[1], Some(&v[2]), &v[3], &v[4], groups, &dspec),
            seed,
        ),
        |name| if name == "offsets" { OFFSET_TOL } else { TOL },
    ));

    // warp
    let mut flow = t(&[1, 2, 4, 5], -3.0, 3.0, &mut r);
    away_from_integers(&mut flow, 0.05);
    let inputs = [("x", t(&[1, 2, 4, 5], -1.0, 1.0, &mut r)), ("flow", flow)];
    out.extend(collect(
        "warp",
        gradient_errors(&inputs, &|g, v| g.warp(&v[0], &v[1]), seed),
        plain,
    ));

    // bilinear_sample
    let mut coords = t(&[1, 2, 3, 4], -1.5, 5.5, &mut r);
    away_from_integers(&mut coords, 0.05);
    let inputs = [("x", t(&[1, 2, 5, 5], -1.0, 1.0, &mut r)), ("coords", coords)];
    out.extend(collect(
        "bilinear_sample",
        gradient_errors(&inputs, &|g, v| g.bilinear_sample(&v[0], &v[1]), seed),
        plain,
    ));

    // pixel_shuffle
    let inputs = [("x", t(&[1, 8, 2, 3], -1.0, 1.0, &mut r))];
    out.extend(collect(
        "pixel_shuffle",
        gradient_errors(&inputs, &|g, v| g.pixel_shuffle(&v[0], 2), seed),
        plain,
    ));

    // activations
    let mut x = t(&[1, 2, 3, 3], -2.0, 2.0, &mut r);
    away_from_zero(&mut x, 0.01);
    let inputs = [("x", x)];
    out.extend(collect(
        "leaky_relu",
        gradient_errors(&inputs, &|g, v| g.leaky_relu(&v[0], 0.1), seed),
        plain,
    ));
    out.extend(collect(
        "relu",
        gradient_errors(&inputs, &|g, v| g.relu(&v[0]), seed),
        plain,
    ));
    let inputs = [("x", t(&[1, 2, 3, 3], -4.0, 4.0, &mut r))];
    out.extend(collect(
        "sigmoid",
        gradient_errors(&inputs, &|g, v| g.sigmoid(&v[0]), seed),
        plain,
    ));

    // elementwise and channel plumbing
    let inputs = [
        ("a", t(&[2, 3, 2, 2], -1.0, 1.0, &mut r)),
        ("b", t(&[2, 3, 2, 2], -1.0, 1.0, &mut r)),
    ];
    out.extend(collect(
        "add",
        gradient_errors(&inputs, &|g, v| g.add(&v[0], &v[1]), seed),
        plain,
    ));
    out.extend(collect(
        "sub",
        gradient_errors(&inputs, &|g, v| g.sub(&v[0], &v[1]), seed),
        plain,
    ));
    out.extend(collect(
        "mul",
        gradient_errors(&inputs, &|g, v| g.mul(&v[0], &v[1]), seed),
        plain,
    ));
    out.extend(collect(
        "scale",
        gradient_errors(&inputs[..1], &|g, v| g.scale(&v[0], -1.7), seed),
        plain,
    ));
    out.extend(collect(
        "cat_channels",
        gradient_errors(&inputs, &|g, v| g.cat_channels(&[&v[0], &v[1]]), seed),
        plain,
    ));
    out.extend(collect(
        "narrow_channels",
        gradient_errors(&inputs[..1], &|g, v| g.narrow_channels(&v[0], 1, 2), seed),
        plain,
    ));
    out.extend(collect(
        "sum",
        gradient_errors(&inputs[..1], &|g, v| g.sum(&v[0]), seed),
        plain,
    ));

    // add_flow_to_offsets
    let inputs = [
        ("raw", t(&[1, 2 * 2 * 18, 3, 3], -1.0, 1.0, &mut r)),
        ("s1", t(&[1, 2, 3, 3], -3.0, 3.0, &mut r)),
        ("s2", t(&[1, 2, 3, 3], -3.0, 3.0, &mut r)),
    ];
    out.extend(collect(
        "add_flow_to_offsets",
        gradient_errors(
            &inputs,
            &|g, v| g.add_flow_to_offsets(&v[0], &[&v[1], &v[2]], 2, 9),
            seed,
        ),
        plain,
    ));

    // resize_bilinear, up and down
    let inputs = [("x", t(&[1, 2, 4, 5], -1.0, 1.0, &mut r))];
    out.extend(collect(
        "resize_bilinear_up",
        gradient_errors(&inputs, &|g, v| g.resize_bilinear(&v[0], 9, 7), seed),
        plain,
    ));
    out.extend(collect(
        "resize_bilinear_down",
        gradient_errors(&inputs, &|g, v| g.resize_bilinear(&v[0], 2, 3), seed),
        plain,
    ));

    // charbonnier, differences kept away from zero
    let pred = t(&[1, 3, 3, 3], -1.0, 1.0, &mut r);
    let mut d = t(&[1, 3, 3, 3], -0.5, 0.5, &mut r);
    away_from_zero(&mut d, 0.05);
    let target = pred.sub(&d).unwrap();
    let inputs = [("pred", pred), ("target", target)];
    out.extend(collect(
        "charbonnier",
        gradient_errors(&inputs, &|g, v| g.charbonnier(&v[0], &v[1], 1e-8), seed),
        plain,
    ));
    out
}

/// The whole second-order alignment block, every weight and input random.
pub fn alignment_block_case(seed: u64) -> Vec<GradResult> {
    let mut r = rng(seed ^ 0xa11);
    let module = FlowGuidedAlignment::new("a", 2, 2, 1, AlignmentMode::FlowGuidedDcn);
    let layers = module.layers();
    let mut names: Vec<String> = Vec::new();
    let mut tensors: Vec<Tensor<f64>> = Vec::new();
    for l in &layers {
        names.push(l.weight_name());
        names.push(l.bias_name());
        if l.name.ends_with(".offset") {
            // Zero weights and integer biases keep every sampling position at
            // the flow's fractional part, away from the bilinear kinks.
            tensors.push(Tensor::zeros(&l.conv.weight_shape()));
            let mut b = Tensor::zeros(&[l.conv.out_channels]);
            for v in b.data_mut() {
                *v = r.random_range(-1i32..=1) as f64;
            }
            tensors.push(b);
        } else {
            tensors.push(t(&l.conv.weight_shape(), -0.3, 0.3, &mut r));
            tensors.push(t(&[l.conv.out_channels], -0.3, 0.3, &mut r));
        }
    }
    let (h, w) = (4, 4);
    for name in ["g", "f1", "f2"] {
        names.push(name.into());
        tensors.push(t(&[1, 2, h, w], -1.0, 1.0, &mut r));
    }
    for name in ["s1", "s2"] {
        let mut s = t(&[1, 2, h, w], -1.5, 1.5, &mut r);
        away_from_integers(&mut s, 0.05);
        names.push(name.into());
        tensors.push(s);
    }
    let inputs: Vec<(&str, Tensor<f64>)> = names.iter().map(|n| n.as_str()).zip(tensors).collect();
    let n_params = 2 * layers.len();
    let build = |g: &Graph<f64>, v: &[Var<f64>]| -> Result<Var<f64>> {
        // The block reads parameters by name through Ctx; expose the
        // perturbed tensors as a weight map and re-register them as leaves.
        let mut weights = ModelWeights::<f64>::new();
        for (k, var) in v[..n_params].iter().enumerate() {
            weights.insert(names[k].clone(), var.value().clone())?;
        }
        let ctx = Ctx::new(g, &weights);
        let x = &v[n_params..];
        let out = module.forward(&ctx, &x[0], &[&x[1], &x[2]], &[&x[3], &x[4]])?;
        Ok(out)
    };
    // A smaller step keeps the stacked LeakyReLU kinks out of the stencil.
    collect(
        "alignment_block",
        gradient_errors_with_step(&inputs, &build, seed, BLOCK_FD_STEP),
        |_| OFFSET_TOL,
    )
}
