//! Alignment-module oracles shared by the focused tests and the acceptance runner.

use rand::{Rng, RngExt};
use vsrpp_core::align::FlowGuidedAlignment;
use vsrpp_core::kernels;
use vsrpp_core::net::layers::Ctx;
use vsrpp_core::net::AlignmentMode;
use vsrpp_core::{Graph, ModelWeights, Tensor, Var};

use super::checks::flow_broadcast_ref;
use super::*;

pub struct AlignInputs {
    pub current: Tensor,
    pub prevs: Vec<Tensor>,
    pub flows: Vec<Tensor>,
}

pub fn random_inputs(module: &FlowGuidedAlignment, h: usize, w: usize, r: &mut impl Rng) -> AlignInputs {
    let c = module.channels;
    AlignInputs {
        current: rand_tensor(&[1, c, h, w], -1.0, 1.0, r),
        prevs: (0..module.order)
            .map(|_| rand_tensor(&[1, c, h, w], -1.0, 1.0, r))
            .collect(),
        flows: (0..module.order)
            .map(|_| rand_tensor(&[1, 2, h, w], -3.0, 3.0, r))
            .collect(),
    }
}

/// Weights with every layer random, including the offset and mask convs.
pub fn random_weights(module: &FlowGuidedAlignment, r: &mut impl Rng) -> ModelWeights {
    let mut w = ModelWeights::new();
    for l in module.layers() {
        w.insert(l.weight_name(), rand_tensor(&l.conv.weight_shape(), -0.2, 0.2, r))
            .unwrap();
        w.insert(l.bias_name(), rand_tensor(&[l.conv.out_channels], -0.2, 0.2, r))
            .unwrap();
    }
    w
}

pub fn set(weights: &mut ModelWeights, name: &str, t: Tensor) {
    *weights.get_mut(name).unwrap() = t;
}

fn vars(g: &Graph<f32>, inputs: &AlignInputs) -> (Var<f32>, Vec<Var<f32>>, Vec<Var<f32>>) {
    (
        g.constant(inputs.current.clone()),
        inputs.prevs.iter().map(|t| g.constant(t.clone())).collect(),
        inputs.flows.iter().map(|t| g.constant(t.clone())).collect(),
    )
}

/// Offsets and masks produced by the module.
pub fn bundle(module: &FlowGuidedAlignment, weights: &ModelWeights, inputs: &AlignInputs) -> (Tensor, Tensor) {
    let g = Graph::no_grad();
    let ctx = Ctx::new(&g, weights);
    let (cur, prevs, flows) = vars(&g, inputs);
    let p: Vec<&Var<f32>> = prevs.iter().collect();
    let f: Vec<&Var<f32>> = flows.iter().collect();
    let (o, m) = module.bundle(&ctx, &cur, &p, &f).unwrap();
    (o.into_tensor(), m.into_tensor())
}

pub fn forward(module: &FlowGuidedAlignment, weights: &ModelWeights, inputs: &AlignInputs) -> Tensor {
    let g = Graph::no_grad();
    let ctx = Ctx::new(&g, weights);
    let (cur, prevs, flows) = vars(&g, inputs);
    let p: Vec<&Var<f32>> = prevs.iter().collect();
    let f: Vec<&Var<f32>> = flows.iter().collect();
    module.forward(&ctx, &cur, &p, &f).unwrap().into_tensor()
}

fn lrelu_ref(t: &Tensor) -> Tensor {
    t.map(|v| if v < 0.0 { 0.1 * v } else { v })
}

/// Raw offset/mask conv outputs recomputed from the scalar oracles:
/// warp each predecessor, concatenate with the current feature and the
/// flows, three conv + LeakyReLU layers, then the two heads.
pub fn raw_heads_ref(module: &FlowGuidedAlignment, weights: &ModelWeights, inputs: &AlignInputs) -> (Tensor, Tensor) {
    let warped: Vec<Tensor> = inputs
        .prevs
        .iter()
        .zip(&inputs.flows)
        .map(|(f, s)| warp_ref(f, s))
        .collect();
    let mut parts: Vec<&Tensor> = vec![&inputs.current];
    parts.extend(warped.iter());
    parts.extend(inputs.flows.iter());
    let mut x = Tensor::cat_channels(&parts).unwrap();
    let layer = |name: &str, x: &Tensor| {
        let w = weights.get(&format!("{}.{name}.weight", module.prefix)).unwrap();
        let b = weights.get(&format!("{}.{name}.bias", module.prefix)).unwrap();
        conv_ref(x, w, Some(b), 1, 1)
    };
    for name in ["conv1", "conv2", "conv3"] {
        x = lrelu_ref(&layer(name, &x));
    }
    (layer("offset", &x), layer("mask", &x))
}

/// Zeroed offset head: offsets equal the broadcast flow exactly. Checked at
/// the paper's 64-channel, 8-groups-per-flow shape (288 offsets, 144 masks).
pub fn zero_residue_case(seed: u64) -> bool {
    let mut r = rng(seed);
    let module = FlowGuidedAlignment::new("a", 64, 2, 8, AlignmentMode::FlowGuidedDcn);
    let mut weights = random_weights(&module, &mut r);
    let oc = module.offset_channels();
    set(&mut weights, "a.offset.weight", Tensor::zeros(&[oc, 64, 3, 3]));
    set(&mut weights, "a.offset.bias", Tensor::zeros(&[oc]));
    let inputs = random_inputs(&module, 5, 6, &mut r);
    let (offsets, masks) = bundle(&module, &weights, &inputs);
    let zero = Tensor::zeros(&[1, oc, 5, 6]);
    let flows: Vec<&Tensor> = inputs.flows.iter().collect();
    let want = flow_broadcast_ref(&zero, &flows, 8, 9);
    oc == 288 && module.mask_channels() == 144 && masks.shape()[1] == 144 && offsets == want
}

/// Offsets minus the broadcast flow against the recomputed raw head, and
/// the range of the masks. Returns (max abs error, masks strictly in (0, 1)).
pub fn offset_base_case(seed: u64) -> (f64, bool) {
    let mut r = rng(seed);
    let order = r.random_range(1..=2);
    let gpf = r.random_range(1..=3);
    let module = FlowGuidedAlignment::new(
        "a",
        gpf * r.random_range(1..=2),
        order,
        gpf,
        AlignmentMode::FlowGuidedDcn,
    );
    let weights = random_weights(&module, &mut r);
    let inputs = random_inputs(&module, dim(&mut r, 3, 7), dim(&mut r, 3, 7), &mut r);
    let (offsets, masks) = bundle(&module, &weights, &inputs);
    let (raw_o, raw_m) = raw_heads_ref(&module, &weights, &inputs);
    let flows: Vec<&Tensor> = inputs.flows.iter().collect();
    let want = flow_broadcast_ref(&raw_o, &flows, gpf, 9);
    let err = offsets
        .data()
        .iter()
        .zip(want.data())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs() as f64));
    let in_range = masks.data().iter().all(|&v| v > 0.0 && v < 1.0) && masks.shape() == raw_m.shape();
    (err, in_range)
}

fn force_unit_masks_and_zero_residue(module: &FlowGuidedAlignment, weights: &mut ModelWeights) {
    let c = module.channels;
    let (oc, mc) = (module.offset_channels(), module.mask_channels());
    set(weights, "a.offset.weight", Tensor::zeros(&[oc, c, 3, 3]));
    set(weights, "a.offset.bias", Tensor::zeros(&[oc]));
    // sigmoid(40) rounds to exactly 1 in f32.
    set(weights, "a.mask.weight", Tensor::zeros(&[mc, c, 3, 3]));
    set(weights, "a.mask.bias", Tensor::full(&[mc], 40.0));
}

fn crop_interior(t: &Tensor, m: usize) -> Tensor {
    let (_, c, h, w) = t.dims4().unwrap();
    let mut v = Vec::new();
    for ch in 0..c {
        for y in m..h - m {
            for x in m..w - m {
                v.push(t.at4(0, ch, y, x));
            }
        }
    }
    Tensor::from_vec(&[v.len()], v).unwrap()
}

/// Zero residue, unit masks and uniform flows: the second-order module
/// equals warping each predecessor by its flow, concatenating and applying
/// the DCN weights as an ordinary conv. The DCN weight is the averaging
/// identity when `averaging`, random otherwise. Interior relative error.
pub fn warp_equivalence_case(seed: u64, averaging: bool) -> f64 {
    let mut r = rng(seed);
    let gpf = r.random_range(1..=2);
    let c = gpf * r.random_range(1..=2);
    let module = FlowGuidedAlignment::new("a", c, 2, gpf, AlignmentMode::FlowGuidedDcn);
    let mut weights = random_weights(&module, &mut r);
    force_unit_masks_and_zero_residue(&module, &mut weights);
    if averaging {
        let mut w = Tensor::zeros(&[c, 2 * c, 3, 3]);
        for o in 0..c {
            for ky in 0..3 {
                for kx in 0..3 {
                    w.set4(o, o, ky, kx, 1.0 / 18.0);
                    w.set4(o, c + o, ky, kx, 1.0 / 18.0);
                }
            }
        }
        set(&mut weights, "a.dcn.weight", w);
    }
    let (h, w) = (dim(&mut r, 6, 10), dim(&mut r, 6, 10));
    let mut inputs = random_inputs(&module, h, w, &mut r);
    for s in inputs.flows.iter_mut() {
        let (dx, dy) = (r.random_range(-2.5..2.5f32), r.random_range(-2.5..2.5f32));
        for y in 0..h {
            for x in 0..w {
                s.set4(0, 0, y, x, dx);
                s.set4(0, 1, y, x, dy);
            }
        }
    }
    let got = forward(&module, &weights, &inputs);
    let warped: Vec<Tensor> = inputs
        .prevs
        .iter()
        .zip(&inputs.flows)
        .map(|(f, s)| warp_ref(f, s))
        .collect();
    let cat = Tensor::cat_channels(&[&warped[0], &warped[1]]).unwrap();
    let want = conv_ref(
        &cat,
        weights.get("a.dcn.weight").unwrap(),
        weights.get("a.dcn.bias"),
        1,
        1,
    );
    rel_err(&crop_interior(&got, 1), &crop_interior(&want, 1))
}

/// Integer uniform flow, zero residue, unit masks and a centre-tap identity
/// DCN: the first-order module shifts `f_prev1` by the flow. Interior
/// relative error against direct index arithmetic.
pub fn integer_shift_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let gpf = r.random_range(1..=2);
    let c = gpf * r.random_range(1..=2);
    let module = FlowGuidedAlignment::new("a", c, 1, gpf, AlignmentMode::FlowGuidedDcn);
    let mut weights = random_weights(&module, &mut r);
    force_unit_masks_and_zero_residue(&module, &mut weights);
    let mut id = Tensor::zeros(&[c, c, 3, 3]);
    for o in 0..c {
        id.set4(o, o, 1, 1, 1.0);
    }
    set(&mut weights, "a.dcn.weight", id);
    set(&mut weights, "a.dcn.bias", Tensor::zeros(&[c]));
    let (h, w) = (dim(&mut r, 8, 12), dim(&mut r, 8, 12));
    let mut inputs = random_inputs(&module, h, w, &mut r);
    let (dx, dy) = (r.random_range(-2i64..=2), r.random_range(-2i64..=2));
    for y in 0..h {
        for x in 0..w {
            inputs.flows[0].set4(0, 0, y, x, dx as f32);
            inputs.flows[0].set4(0, 1, y, x, dy as f32);
        }
    }
    let got = forward(&module, &weights, &inputs);
    let mut want = Tensor::zeros(&[1, c, h, w]);
    for ch in 0..c {
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                want.set4(
                    0,
                    ch,
                    y as usize,
                    x as usize,
                    at(&inputs.prevs[0], 0, ch, y + dy, x + dx) as f32,
                );
            }
        }
    }
    rel_err(&crop_interior(&got, 2), &crop_interior(&want, 2))
}

/// Zero raw heads and zero flows: zero offsets and masks of exactly 0.5.
pub fn zero_raw_case() -> bool {
    let raw_o: Tensor = Tensor::zeros(&[1, 2 * 3 * 18, 2, 3]);
    let raw_m: Tensor = Tensor::zeros(&[1, 2 * 3 * 9, 2, 3]);
    let zero = Tensor::zeros(&[1, 2, 2, 3]);
    let offsets = kernels::deform::add_flow_to_offsets(&raw_o, &[&zero, &zero], 3, 9).unwrap();
    let masks = kernels::sigmoid(&raw_m);
    offsets.data().iter().all(|&v| v == 0.0) && masks.data().iter().all(|&v| v == 0.5)
}
