//! Coarse-to-fine dense Lucas–Kanade.

use crate::error::{Result, VsrError};
use crate::flow::{FlowField, FlowProvider, DEFAULT_MAX_FLOW};
use crate::kernels::resize_bilinear;
use crate::parallel::map_indexed;
use crate::tensor::Tensor;

/// Classical pyramidal estimator used as the default flow provider.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PyramidalFlow {
    pub levels: usize,
    pub iters: usize,
    /// Half-size of the square summation window.
    pub window_radius: usize,
    /// Windows whose structure tensor has a smaller eigenvalue than this
    /// are treated as textureless and receive no update.
    pub min_eigenvalue: f64,
    pub max_magnitude: f32,
}

impl Default for PyramidalFlow {
    fn default() -> Self {
        PyramidalFlow {
            levels: 3,
            iters: 5,
            window_radius: 2,
            min_eigenvalue: 1e-5,
            max_magnitude: DEFAULT_MAX_FLOW,
        }
    }
}

impl FlowProvider for PyramidalFlow {
    fn estimate(&self, reference: &Tensor, neighbor: &Tensor) -> Result<FlowField> {
        estimate_pyramidal(reference, neighbor, self)
    }

    fn name(&self) -> &str {
        "pyramidal"
    }
}

#[derive(Clone)]
struct Plane {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Plane {
    fn at(&self, y: isize, x: isize) -> f64 {
        let y = y.clamp(0, self.h as isize - 1) as usize;
        let x = x.clamp(0, self.w as isize - 1) as usize;
        self.v[y * self.w + x]
    }

    /// Bilinear read with coordinates clamped to the image.
    fn sample(&self, y: f64, x: f64) -> f64 {
        let y = y.clamp(0.0, (self.h - 1) as f64);
        let x = x.clamp(0.0, (self.w - 1) as f64);
        let (y0, x0) = (y.floor(), x.floor());
        let (ly, lx) = (y - y0, x - x0);
        let (y0, x0) = (y0 as isize, x0 as isize);
        let top = self.at(y0, x0) * (1.0 - lx) + self.at(y0, x0 + 1) * lx;
        let bot = self.at(y0 + 1, x0) * (1.0 - lx) + self.at(y0 + 1, x0 + 1) * lx;
        top * (1.0 - ly) + bot * ly
    }

    /// 5-tap binomial blur followed by 2× decimation.
    fn downsample(&self) -> Plane {
        const K: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
        let (h2, w2) = (self.h.div_ceil(2), self.w.div_ceil(2));
        let mut tmp = vec![0.0; self.h * w2];
        for y in 0..self.h {
            for x in 0..w2 {
                tmp[y * w2 + x] = (0..5)
                    .map(|k| K[k] * self.at(y as isize, 2 * x as isize + k as isize - 2))
                    .sum();
            }
        }
        let tmp = Plane {
            h: self.h,
            w: w2,
            v: tmp,
        };
        let mut v = vec![0.0; h2 * w2];
        for y in 0..h2 {
            for x in 0..w2 {
                v[y * w2 + x] = (0..5)
                    .map(|k| K[k] * tmp.at(2 * y as isize + k as isize - 2, x as isize))
                    .sum();
            }
        }
        Plane { h: h2, w: w2, v }
    }
}

/// Luma planes of every batch item; single-channel input passes through.
fn luma_planes(t: &Tensor) -> Result<Vec<Plane>> {
    let (n, c, h, w) = t.dims4()?;
    let plane = h * w;
    (0..n)
        .map(|b| {
            let base = b * c * plane;
            let v = match c {
                1 => t.data()[base..base + plane].iter().map(|&v| v as f64).collect(),
                3 => (0..plane)
                    .map(|q| {
                        let d = t.data();
                        0.299 * d[base + q] as f64
                            + 0.587 * d[base + plane + q] as f64
                            + 0.114 * d[base + 2 * plane + q] as f64
                    })
                    .collect(),
                _ => return Err(VsrError::dim(format!("flow estimation needs 1 or 3 channels, got {c}"))),
            };
            Ok(Plane { h, w, v })
        })
        .collect()
}

/// Box sum over a `(2r+1)²` window with clamped borders.
fn box_sum(src: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    let r = r as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = (-r..=r).map(|d| src[y * w + clamp(x as isize + d, w)]).sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (-r..=r).map(|d| tmp[clamp(y as isize + d, h) * w + x]).sum();
        }
    }
    out
}

fn median3x3(src: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    let mut win = [0.0f64; 9];
    for y in 0..h {
        for x in 0..w {
            let mut k = 0;
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    win[k] = src[yy * w + xx];
                    k += 1;
                }
            }
            win.sort_by(|a, b| a.total_cmp(b));
            out[y * w + x] = win[4];
        }
    }
    out
}

/// Largest per-iteration update, in pixels of the current level.
const MAX_STEP: f64 = 1.0;

/// One Lucas–Kanade level: refines `(u, v)` in place.
fn refine_level(reference: &Plane, neighbor: &Plane, u: &mut [f64], v: &mut [f64], cfg: &PyramidalFlow) {
    let (h, w) = (reference.h, reference.w);
    let grad = |p: &Plane, y: usize, x: usize| {
        let (y, x) = (y as isize, x as isize);
        (
            0.5 * (p.at(y, x + 1) - p.at(y, x - 1)),
            0.5 * (p.at(y + 1, x) - p.at(y - 1, x)),
        )
    };
    let ref_grad: Vec<(f64, f64)> = (0..h * w).map(|q| grad(reference, q / w, q % w)).collect();
    // The structure tensor uses reference gradients only, so it is fixed for
    // the level and each pixel's iteration is a plain Gauss-Newton fixed point.
    let products: [fn((f64, f64)) -> f64; 3] = [|g| g.0 * g.0, |g| g.0 * g.1, |g| g.1 * g.1];
    let tensor: Vec<Vec<f64>> = products
        .iter()
        .map(|f| {
            let field: Vec<f64> = ref_grad.iter().map(|&g| f(g)).collect();
            box_sum(&field, h, w, cfg.window_radius)
        })
        .collect();
    let r = cfg.window_radius as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    for _ in 0..cfg.iters {
        let updated = map_indexed(h * w, |q| {
            let (uq, vq) = (u[q], v[q]);
            let (a, b, c) = (tensor[0][q], tensor[1][q], tensor[2][q]);
            let half_trace = 0.5 * (a + c);
            let spread = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            if half_trace - spread < cfg.min_eigenvalue {
                return (uq, vq);
            }
            let (y, x) = ((q / w) as isize, (q % w) as isize);
            // Mismatch over the window, every pixel displaced by this pixel's flow.
            let (mut bx, mut by) = (0.0, 0.0);
            for dy in -r..=r {
                let yy = clamp(y + dy, h);
                for dx in -r..=r {
                    let xx = clamp(x + dx, w);
                    let p = yy * w + xx;
                    let it = neighbor.sample(yy as f64 + vq, xx as f64 + uq) - reference.v[p];
                    bx += ref_grad[p].0 * it;
                    by += ref_grad[p].1 * it;
                }
            }
            let det = a * c - b * b;
            let (du, dv) = ((c * bx - b * by) / det, (a * by - b * bx) / det);
            // Near-degenerate windows can ask for huge steps; a bounded step
            // keeps the iteration from running away.
            let scale = (MAX_STEP / du.hypot(dv)).min(1.0);
            (uq - du * scale, vq - dv * scale)
        });
        for (q, (uq, vq)) in updated.into_iter().enumerate() {
            u[q] = uq;
            v[q] = vq;
        }
    }
    let mu = median3x3(u, h, w);
    let mv = median3x3(v, h, w);
    u.copy_from_slice(&mu);
    v.copy_from_slice(&mv);
}

/// Coarse-to-fine flow from `reference` to `neighbor`.
///
/// Frames are `N × C × H × W` with `C` 1 (luma) or 3 (RGB). When the frame
/// is smaller than `2^levels` the pyramid is shortened and a warning logged.
pub fn estimate_pyramidal(reference: &Tensor, neighbor: &Tensor, cfg: &PyramidalFlow) -> Result<FlowField> {
    reference.expect_same_shape(neighbor, "estimate_pyramidal")?;
    let (n, _, h, w) = reference.dims4()?;
    let mut levels = cfg.levels.max(1);
    while levels > 1 && h.min(w) < (1 << levels) {
        levels -= 1;
    }
    if levels < cfg.levels {
        log::warn!(
            "frames of {h}×{w} too small for {} pyramid levels, using {levels}",
            cfg.levels
        );
    }
    let refs = luma_planes(reference)?;
    let nbrs = luma_planes(neighbor)?;
    let mut out = Vec::with_capacity(n * 2 * h * w);
    for (r, nb) in refs.into_iter().zip(nbrs) {
        let mut pyr = vec![(r, nb)];
        for _ in 1..levels {
            let (pr, pn) = pyr.last().expect("non-empty");
            let next = (pr.downsample(), pn.downsample());
            pyr.push(next);
        }
        let (mut u, mut v) = (Vec::new(), Vec::new());
        let (mut lh, mut lw) = (0, 0);
        for (pr, pn) in pyr.iter().rev() {
            if u.is_empty() {
                u = vec![0.0; pr.h * pr.w];
                v = vec![0.0; pr.h * pr.w];
            } else {
                let coarse = Tensor::<f64>::from_vec(&[1, 2, lh, lw], [u, v].concat())?;
                let fine = resize_bilinear(&coarse, pr.h, pr.w)?;
                let sx = pr.w as f64 / lw as f64;
                let sy = pr.h as f64 / lh as f64;
                let plane = pr.h * pr.w;
                u = fine.data()[..plane].iter().map(|x| x * sx).collect();
                v = fine.data()[plane..].iter().map(|y| y * sy).collect();
            }
            refine_level(pr, pn, &mut u, &mut v, cfg);
            (lh, lw) = (pr.h, pr.w);
        }
        out.extend(u.iter().map(|&x| x as f32));
        out.extend(v.iter().map(|&y| y as f32));
    }
    let mut flow = FlowField::new(Tensor::from_vec(&[n, 2, h, w], out)?)?;
    flow.cap_magnitude(cfg.max_magnitude);
    Ok(flow)
}
