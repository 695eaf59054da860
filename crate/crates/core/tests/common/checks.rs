//! Oracle comparisons that return their worst error, so both the focused
//! tests and the acceptance runner can use them.

use rand::RngExt;
use vsrpp_core::kernels::{self, deform};
use vsrpp_core::{ConvSpec, Tensor};

use super::*;

pub const KERNEL_SHAPES: u64 = 24;

/// Random stride/padding/kernel conv against the scalar loop.
pub fn conv_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (n, ci, co) = (dim(&mut r, 1, 2), dim(&mut r, 1, 5), dim(&mut r, 1, 6));
    let (kh, kw) = (dim(&mut r, 1, 3), dim(&mut r, 1, 3));
    let stride = dim(&mut r, 1, 2);
    let pad = dim(&mut r, 0, 2);
    let (h, w) = (dim(&mut r, kh.max(3), 9), dim(&mut r, kw.max(3), 9));
    let spec = ConvSpec {
        in_channels: ci,
        out_channels: co,
        kernel_h: kh,
        kernel_w: kw,
        stride,
        padding: pad,
        has_bias: r.random_bool(0.5),
    };
    let x: Tensor = rand_tensor(&[n, ci, h, w], -1.0, 1.0, &mut r);
    let wt: Tensor = rand_tensor(&spec.weight_shape(), -1.0, 1.0, &mut r);
    let b: Tensor = rand_tensor(&[co], -1.0, 1.0, &mut r);
    let bias = spec.has_bias.then_some(&b);
    let got = kernels::conv2d(&x, &wt, bias, &spec).unwrap();
    rel_err(&got, &conv_ref(&x, &wt, bias, stride, pad))
}

/// Random deformable convolution (offsets up to ±3 px, some samples
/// outside the image) against the scalar loop.
pub fn deform_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let groups = dim(&mut r, 1, 3);
    let ci = groups * dim(&mut r, 1, 2);
    let (n, co) = (dim(&mut r, 1, 2), dim(&mut r, 1, 4));
    let k = if r.random_bool(0.7) { 3 } else { 1 };
    let stride = dim(&mut r, 1, 2);
    let (h, w) = (dim(&mut r, 3, 8), dim(&mut r, 3, 8));
    let spec = ConvSpec {
        stride,
        ..ConvSpec::same(ci, co, k)
    };
    let (ho, wo) = spec.output_size(h, w).unwrap();
    let taps = k * k;
    let x: Tensor = rand_tensor(&[n, ci, h, w], -1.0, 1.0, &mut r);
    let wt: Tensor = rand_tensor(&spec.weight_shape(), -1.0, 1.0, &mut r);
    let b: Tensor = rand_tensor(&[co], -1.0, 1.0, &mut r);
    let off: Tensor = rand_tensor(&[n, groups * taps * 2, ho, wo], -3.0, 3.0, &mut r);
    let m: Tensor = rand_tensor(&[n, groups * taps, ho, wo], 0.0, 1.0, &mut r);
    let got = kernels::deform_conv2d(&x, &wt, Some(&b), &off, &m, groups, &spec).unwrap();
    rel_err(
        &got,
        &deform_ref(&x, &wt, Some(&b), &off, &m, groups, stride, spec.padding),
    )
}

pub fn warp_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (n, c, h, w) = (
        dim(&mut r, 1, 2),
        dim(&mut r, 1, 4),
        dim(&mut r, 2, 10),
        dim(&mut r, 2, 10),
    );
    let x: Tensor = rand_tensor(&[n, c, h, w], -1.0, 1.0, &mut r);
    let flow: Tensor = rand_tensor(&[n, 2, h, w], -4.0, 4.0, &mut r);
    rel_err(&kernels::warp(&x, &flow).unwrap(), &warp_ref(&x, &flow))
}

pub fn sample_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (n, c, h, w) = (
        dim(&mut r, 1, 2),
        dim(&mut r, 1, 4),
        dim(&mut r, 2, 9),
        dim(&mut r, 2, 9),
    );
    let (ho, wo) = (dim(&mut r, 1, 7), dim(&mut r, 1, 7));
    let x: Tensor = rand_tensor(&[n, c, h, w], -1.0, 1.0, &mut r);
    let mut coords: Tensor = rand_tensor(&[n, 2, ho, wo], -2.0, 1.0, &mut r);
    for b in 0..n {
        for y in 0..ho {
            for xx in 0..wo {
                let vx = coords.at4(b, 0, y, xx) * (w as f32 + 2.0);
                let vy = coords.at4(b, 1, y, xx) * (h as f32 + 2.0);
                coords.set4(b, 0, y, xx, vx.abs() - 1.5);
                coords.set4(b, 1, y, xx, vy.abs() - 1.5);
            }
        }
    }
    rel_err(
        &kernels::bilinear_sample(&x, &coords).unwrap(),
        &sample_ref(&x, &coords),
    )
}

pub fn shuffle_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let rr = dim(&mut r, 1, 3);
    let (n, c, h, w) = (
        dim(&mut r, 1, 2),
        dim(&mut r, 1, 3),
        dim(&mut r, 1, 5),
        dim(&mut r, 1, 5),
    );
    let x: Tensor = rand_tensor(&[n, c * rr * rr, h, w], -1.0, 1.0, &mut r);
    rel_err(&kernels::pixel_shuffle(&x, rr).unwrap(), &pixel_shuffle_ref(&x, rr))
}

/// Worst error of each kernel over `KERNEL_SHAPES` random shapes.
pub fn kernel_oracle_suite() -> Vec<(&'static str, f64)> {
    let cases: [(&str, fn(u64) -> f64); 5] = [
        ("conv2d", conv_case),
        ("deform_conv2d", deform_case),
        ("warp", warp_case),
        ("bilinear_sample", sample_case),
        ("pixel_shuffle", shuffle_case),
    ];
    cases
        .iter()
        .map(|(name, f)| (*name, (0..KERNEL_SHAPES).map(|s| f(1000 + s)).fold(0.0, f64::max)))
        .collect()
}

/// Zero offsets and unit masks reproduce conv2d.
pub fn dcn_zero_offset_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let groups = dim(&mut r, 1, 3);
    let ci = groups * dim(&mut r, 1, 3);
    let co = dim(&mut r, 1, 4);
    let (h, w) = (dim(&mut r, 3, 9), dim(&mut r, 3, 9));
    let spec = ConvSpec::same(ci, co, 3);
    let x: Tensor = rand_tensor(&[1, ci, h, w], -1.0, 1.0, &mut r);
    let wt: Tensor = rand_tensor(&spec.weight_shape(), -1.0, 1.0, &mut r);
    let b: Tensor = rand_tensor(&[co], -1.0, 1.0, &mut r);
    let off = Tensor::zeros(&[1, groups * 18, h, w]);
    let m = Tensor::ones(&[1, groups * 9, h, w]);
    let got = kernels::deform_conv2d(&x, &wt, Some(&b), &off, &m, groups, &spec).unwrap();
    rel_err(&got, &kernels::conv2d(&x, &wt, Some(&b), &spec).unwrap())
}

/// Constant integer offsets `(dy, dx)` equal a conv of the input shifted
/// by that amount, compared where no tap leaves the image.
pub fn dcn_integer_shift_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let groups = dim(&mut r, 1, 2);
    let ci = groups * dim(&mut r, 1, 3);
    let co = dim(&mut r, 1, 4);
    let (h, w) = (dim(&mut r, 9, 12), dim(&mut r, 9, 12));
    let dy = r.random_range(-2i64..=2);
    let dx = r.random_range(-2i64..=2);
    let spec = ConvSpec::same(ci, co, 3);
    let x: Tensor = rand_tensor(&[1, ci, h, w], -1.0, 1.0, &mut r);
    let wt: Tensor = rand_tensor(&spec.weight_shape(), -1.0, 1.0, &mut r);
    let mut off = Tensor::zeros(&[1, groups * 18, h, w]);
    for ch in 0..groups * 9 {
        for y in 0..h {
            for xx in 0..w {
                off.set4(0, 2 * ch, y, xx, dy as f32);
                off.set4(0, 2 * ch + 1, y, xx, dx as f32);
            }
        }
    }
    let m = Tensor::ones(&[1, groups * 9, h, w]);
    let got = kernels::deform_conv2d(&x, &wt, None, &off, &m, groups, &spec.without_bias()).unwrap();
    let mut shifted = Tensor::zeros(&[1, ci, h, w]);
    for c in 0..ci {
        for y in 0..h as i64 {
            for xx in 0..w as i64 {
                shifted.set4(0, c, y as usize, xx as usize, at(&x, 0, c, y + dy, xx + dx) as f32);
            }
        }
    }
    let plain = kernels::conv2d(&shifted, &wt, None, &spec.without_bias()).unwrap();
    // Interior: every tap of output (y, x) reads (y+dy±1, x+dx±1) inside the image.
    let (y0, y1) = (
        (1 - dy).max(1) as usize,
        (h as i64 - 1 - dy.max(0)).min(h as i64 - 1) as usize,
    );
    let (x0, x1) = (
        (1 - dx).max(1) as usize,
        (w as i64 - 1 - dx.max(0)).min(w as i64 - 1) as usize,
    );
    let crop = |t: &Tensor| {
        let mut v = Vec::new();
        for o in 0..co {
            for y in y0..y1 {
                for xx in x0..x1 {
                    v.push(t.at4(0, o, y, xx));
                }
            }
        }
        Tensor::from_vec(&[v.len()], v).unwrap()
    };
    rel_err(&crop(&got), &crop(&plain))
}

/// Scalar reference of the flow broadcast: every `(group, tap)` of block
/// `p` gets `s_p` with x into the x slot and y into the y slot.
pub fn flow_broadcast_ref(raw: &Tensor, flows: &[&Tensor], groups_per_flow: usize, taps: usize) -> Tensor {
    let (n, _, h, w) = raw.dims4().unwrap();
    let mut out = raw.clone();
    for (p, flow) in flows.iter().enumerate() {
        for g in 0..groups_per_flow {
            for tap in 0..taps {
                let group = p * groups_per_flow + g;
                for b in 0..n {
                    for y in 0..h {
                        for x in 0..w {
                            let ych = (group * taps + tap) * 2;
                            let xch = ych + 1;
                            out.set4(b, ych, y, x, raw.at4(b, ych, y, x) + flow.at4(b, 1, y, x));
                            out.set4(b, xch, y, x, raw.at4(b, xch, y, x) + flow.at4(b, 0, y, x));
                        }
                    }
                }
            }
        }
    }
    out
}

/// Library broadcast vs. the explicit (group, tap, coord) loop.
pub fn flow_broadcast_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let order = dim(&mut r, 1, 2);
    let gpf = dim(&mut r, 1, 8);
    let (n, h, w) = (dim(&mut r, 1, 2), dim(&mut r, 1, 6), dim(&mut r, 1, 6));
    let raw: Tensor = rand_tensor(&[n, order * gpf * 18, h, w], -1.0, 1.0, &mut r);
    let flows: Vec<Tensor> = (0..order)
        .map(|_| rand_tensor(&[n, 2, h, w], -5.0, 5.0, &mut r))
        .collect();
    let refs: Vec<&Tensor> = flows.iter().collect();
    let got = deform::add_flow_to_offsets(&raw, &refs, gpf, 9).unwrap();
    let want = flow_broadcast_ref(&raw, &refs, gpf, 9);
    got.data()
        .iter()
        .zip(want.data())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs() as f64))
}
