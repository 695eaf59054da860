//! Scalar-loop reference implementations and helpers shared by the
//! integration tests. Everything here is written directly from the
//! definitions, independently of the library kernels.
#![allow(dead_code)]

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vsrpp_core::{Scalar, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor<T: Scalar, R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Tensor<T> {
    Tensor::uniform(shape, lo, hi, rng)
}

pub fn dim<R: Rng + ?Sized>(rng: &mut R, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

/// `max |a − b| / max |b|`, in f64.
pub fn rel_err<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch");
    let scale = b.data().iter().fold(0.0f64, |m, v| m.max(v.to_f64().unwrap().abs()));
    let diff = a.data().iter().zip(b.data()).fold(0.0f64, |m, (x, y)| {
        m.max((x.to_f64().unwrap() - y.to_f64().unwrap()).abs())
    });
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn idx(shape: &[usize], n: usize, c: usize, y: usize, x: usize) -> usize {
    ((n * shape[1] + c) * shape[2] + y) * shape[3] + x
}

/// Reads `t[n, c, y, x]` as f64, zero outside the image.
pub fn at(t: &Tensor, n: usize, c: usize, y: i64, x: i64) -> f64 {
    let s = t.shape();
    if y < 0 || x < 0 || y >= s[2] as i64 || x >= s[3] as i64 {
        0.0
    } else {
        t.data()[idx(s, n, c, y as usize, x as usize)] as f64
    }
}

/// Bilinear read with zero padding at `(y, x)`.
pub fn bilinear(t: &Tensor, n: usize, c: usize, y: f64, x: f64) -> f64 {
    let (y0, x0) = (y.floor(), x.floor());
    let (ly, lx) = (y - y0, x - x0);
    let (y0, x0) = (y0 as i64, x0 as i64);
    (1.0 - ly) * (1.0 - lx) * at(t, n, c, y0, x0)
        + (1.0 - ly) * lx * at(t, n, c, y0, x0 + 1)
        + ly * (1.0 - lx) * at(t, n, c, y0 + 1, x0)
        + ly * lx * at(t, n, c, y0 + 1, x0 + 1)
}

pub fn conv_ref(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Tensor {
    let (n, ci, h, w) = input.dims4().unwrap();
    let (co, _, kh, kw) = weight.dims4().unwrap();
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros(&[n, co, ho, wo]);
    for b in 0..n {
        for o in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias.map_or(0.0, |bt| bt.data()[o] as f64);
                    for c in 0..ci {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let y = (oy * stride + ky) as i64 - pad as i64;
                                let x = (ox * stride + kx) as i64 - pad as i64;
                                acc += weight.at4(o, c, ky, kx) as f64 * at(input, b, c, y, x);
                            }
                        }
                    }
                    out.set4(b, o, oy, ox, acc as f32);
                }
            }
        }
    }
    out
}

/// Modulated deformable convolution written per output element. Offsets
/// index `(group, tap, coord)` as `((g·taps + tap)·2 + coord)` with coord 0 = y.
#[allow(clippy::too_many_arguments)]
pub fn deform_ref(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    offsets: &Tensor,
    masks: &Tensor,
    groups: usize,
    stride: usize,
    pad: usize,
) -> Tensor {
    let (n, ci, h, w) = input.dims4().unwrap();
    let (co, _, kh, kw) = weight.dims4().unwrap();
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let taps = kh * kw;
    let per_group = ci / groups;
    let mut out = Tensor::zeros(&[n, co, ho, wo]);
    for b in 0..n {
        for o in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias.map_or(0.0, |bt| bt.data()[o] as f64);
                    for c in 0..ci {
                        let g = c / per_group;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let tap = ky * kw + kx;
                                let dy = offsets.at4(b, (g * taps + tap) * 2, oy, ox) as f64;
                                let dx = offsets.at4(b, (g * taps + tap) * 2 + 1, oy, ox) as f64;
                                let m = masks.at4(b, g * taps + tap, oy, ox) as f64;
                                let y = (oy * stride + ky) as f64 - pad as f64 + dy;
                                let x = (ox * stride + kx) as f64 - pad as f64 + dx;
                                acc += weight.at4(o, c, ky, kx) as f64 * m * bilinear(input, b, c, y, x);
                            }
                        }
                    }
                    out.set4(b, o, oy, ox, acc as f32);
                }
            }
        }
    }
    out
}

/// `out(y, x) = in(y + flow_y, x + flow_x)`; flow channel 0 is x.
pub fn warp_ref(input: &Tensor, flow: &Tensor) -> Tensor {
    let (n, c, h, w) = input.dims4().unwrap();
    let mut out = Tensor::zeros(&[n, c, h, w]);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let fy = y as f64 + flow.at4(b, 1, y, x) as f64;
                    let fx = x as f64 + flow.at4(b, 0, y, x) as f64;
                    out.set4(b, ch, y, x, bilinear(input, b, ch, fy, fx) as f32);
                }
            }
        }
    }
    out
}

/// Sampling at absolute coordinates (channel 0 = x, channel 1 = y).
pub fn sample_ref(input: &Tensor, coords: &Tensor) -> Tensor {
    let (n, c, _, _) = input.dims4().unwrap();
    let (_, _, ho, wo) = coords.dims4().unwrap();
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..ho {
                for x in 0..wo {
                    let v = bilinear(
                        input,
                        b,
                        ch,
                        coords.at4(b, 1, y, x) as f64,
                        coords.at4(b, 0, y, x) as f64,
                    );
                    out.set4(b, ch, y, x, v as f32);
                }
            }
        }
    }
    out
}

pub fn pixel_shuffle_ref(input: &Tensor, r: usize) -> Tensor {
    let (n, c, h, w) = input.dims4().unwrap();
    let co = c / (r * r);
    let mut out = Tensor::zeros(&[n, co, h * r, w * r]);
    for b in 0..n {
        for o in 0..co {
            for y in 0..h {
                for x in 0..w {
                    for i in 0..r {
                        for j in 0..r {
                            out.set4(b, o, y * r + i, x * r + j, input.at4(b, o * r * r + i * r + j, y, x));
                        }
                    }
                }
            }
        }
    }
    out
}

pub mod align_checks;
pub mod checks;
pub mod degrade_checks;
pub mod gradcheck;
pub mod net_checks;
