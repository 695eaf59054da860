//! Degradation fidelity checks shared by the data tests and the acceptance run.

use vsrpp_core::data::degrade::{bicubic_axis_weights, degrade_bi, gaussian_blur, BD_KERNEL_SIZE, DEFAULT_BD_SIGMA};
use vsrpp_core::Tensor;

// Frozen outputs of an independent scalar evaluation of the antialiased
// cubic kernel (a = −0.5, width 4/s, centres at (i + 0.5)/s − 0.5,
// symmetric edges, rows normalized), computed in f64.

/// 1×3×16×16 with deltas at (6, 9), (0, 0) and (15, 3) in channels 0, 1, 2, downsampled 4×.
const GOLDEN_DELTA: [f64; 48] = [
    2.0444393157958984e-05,
    -0.0002716183662414551,
    -0.002882659435272217,
    0.0001431107521057129,
    -0.00041180849075317383,
    0.005471169948577881,
    0.05806499719619751,
    -0.002882659435272217,
    -3.88026237487793e-05,
    0.0005155205726623535,
    0.005471169948577881,
    -0.0002716183662414551,
    2.9206275939941406e-06,
    -3.88026237487793e-05,
    -0.00041180849075317383,
    2.0444393157958984e-05,
    0.07800674438476562,
    -0.008182525634765625,
    0.0,
    0.0,
    -0.008182525634765625,
    0.000858306884765625,
    0.0,
    0.0,
    0.0,
    0.0,
    0.0,
    0.0,
    0.0,
    0.0,
    0.0,
    0.0,
    0.0,
    0.0,
    0.0,
    0.0,
    0.0,
    0.0,
    0.0,
    0.0,
    -0.004792213439941406,
    -0.002853870391845703,
    0.0003218650817871094,
    0.0,
    0.045685768127441406,
    0.027206897735595703,
    -0.0030684471130371094,
    0.0,
];

/// 1×3×8×12 with value ((3y + 5x + 7c) mod 13) / 12, downsampled 4×.
const GOLDEN_RAMP: [f64; 18] = [
    0.4505627751350403,
    0.508551150560379,
    0.5253627995649973,
    0.5182431737581888,
    0.5208525359630586,
    0.49726089835166926,
    0.510149637858073,
    0.5269266764322916,
    0.47771453857421875,
    0.5222854614257812,
    0.47307332356770837,
    0.48985036214192706,
    0.5027391016483306,
    0.47914746403694153,
    0.48175682624181115,
    0.4746372004350027,
    0.49144884943962097,
    0.5494372248649597,
];

fn golden_delta_input() -> Tensor {
    let mut t = Tensor::zeros(&[1, 3, 16, 16]);
    t.set4(0, 0, 6, 9, 1.0);
    t.set4(0, 1, 0, 0, 1.0);
    t.set4(0, 2, 15, 3, 1.0);
    t
}

fn golden_ramp_input() -> Tensor {
    let mut t = Tensor::zeros(&[1, 3, 8, 12]);
    for c in 0..3 {
        for y in 0..8 {
            for x in 0..12 {
                t.set4(0, c, y, x, ((3 * y + 5 * x + 7 * c) % 13) as f32 / 12.0);
            }
        }
    }
    t
}

fn max_abs_diff(got: &Tensor, want: &[f64]) -> f64 {
    if got.numel() != want.len() {
        return f64::INFINITY;
    }
    got.data()
        .iter()
        .zip(want)
        .fold(0.0f64, |m, (&a, &b)| m.max((a as f64 - b).abs()))
}

/// Largest deviation of BI outputs from the frozen vectors, per input.
pub fn golden_errors() -> (f64, f64) {
    let d = degrade_bi(&golden_delta_input(), 4).unwrap();
    let r = degrade_bi(&golden_ramp_input(), 4).unwrap();
    (max_abs_diff(&d, &GOLDEN_DELTA), max_abs_diff(&r, &GOLDEN_RAMP))
}

/// Largest |row sum − 1| of the BI axis weights over a spread of sizes.
pub fn partition_of_unity_err() -> f64 {
    let mut worst = 0.0f64;
    for (i, o) in [(16, 4), (12, 3), (64, 16), (7, 28), (5, 5), (100, 25), (9, 2)] {
        for taps in bicubic_axis_weights(i, o) {
            worst = worst.max((taps.iter().map(|t| t.1).sum::<f64>() - 1.0).abs());
        }
    }
    worst
}

/// Largest deviation of the blurred delta from the closed-form separable Gaussian.
pub fn bd_closed_form_err() -> f64 {
    let sigma = DEFAULT_BD_SIGMA;
    let r = (BD_KERNEL_SIZE / 2) as i64;
    let g = |k: i64| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp();
    let norm: f64 = (-r..=r).map(g).sum();
    let (h, w, cy, cx) = (20, 22, 9i64, 11i64);
    let mut delta = Tensor::zeros(&[1, 3, h, w]);
    for c in 0..3 {
        delta.set4(0, c, cy as usize, cx as usize, 1.0);
    }
    let out = gaussian_blur(&delta, sigma, BD_KERNEL_SIZE).unwrap();
    let mut worst = 0.0f64;
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let (dy, dx) = (y - cy, x - cx);
            let want = if dy.abs() <= r && dx.abs() <= r {
                g(dy) * g(dx) / (norm * norm)
            } else {
                0.0
            };
            for c in 0..3 {
                worst = worst.max((out.at4(0, c, y as usize, x as usize) as f64 - want).abs());
            }
        }
    }
    worst
}
