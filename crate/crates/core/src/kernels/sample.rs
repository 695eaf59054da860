//! Bilinear sampling with zero padding, flow warping and bilinear resizing.
//!
//! Sample grids and flows are `N × 2 × H × W` with channel 0 the horizontal
//! (x) coordinate and channel 1 the vertical (y) coordinate, in pixels.
//! Pixel centres sit at integer coordinates.

use crate::error::{Result, VsrError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// The four neighbours of a sample point with their interpolation weights
/// and the weights' derivatives along y and x. Out-of-image neighbours have
/// no index and contribute zero.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Taps<T> {
    pub idx: [Option<usize>; 4],
    pub w: [T; 4],
    pub dwdy: [T; 4],
    pub dwdx: [T; 4],
}

impl<T: Scalar> Taps<T> {
    pub(crate) fn new(h: usize, w: usize, y: T, x: T) -> Self {
        let none = Taps {
            idx: [None; 4],
            w: [T::zero(); 4],
            dwdy: [T::zero(); 4],
            dwdx: [T::zero(); 4],
        };
        let one = T::one();
        // Anything at or beyond one pixel outside the image touches only padding.
        if !(y > -one && x > -one && y < T::of(h as f64) && x < T::of(w as f64)) {
            return none;
        }
        let y0f = y.floor();
        let x0f = x.floor();
        let ly = y - y0f;
        let lx = x - x0f;
        let hy = one - ly;
        let hx = one - lx;
        let y0 = y0f.to_isize().unwrap_or(-2);
        let x0 = x0f.to_isize().unwrap_or(-2);
        let at = |yy: isize, xx: isize| {
            (yy >= 0 && xx >= 0 && yy < h as isize && xx < w as isize).then(|| yy as usize * w + xx as usize)
        };
        Taps {
            idx: [at(y0, x0), at(y0, x0 + 1), at(y0 + 1, x0), at(y0 + 1, x0 + 1)],
            w: [hy * hx, hy * lx, ly * hx, ly * lx],
            dwdy: [-hx, -lx, hx, lx],
            dwdx: [-hy, hy, -ly, ly],
        }
    }

    #[inline]
    pub(crate) fn sample(&self, plane: &[T]) -> T {
        let mut acc = T::zero();
        for i in 0..4 {
            if let Some(j) = self.idx[i] {
                acc = acc + self.w[i] * plane[j];
            }
        }
        acc
    }

    /// `(d value / dy, d value / dx)` at the sample point.
    #[inline]
    pub(crate) fn grad_coords(&self, plane: &[T]) -> (T, T) {
        let (mut gy, mut gx) = (T::zero(), T::zero());
        for i in 0..4 {
            if let Some(j) = self.idx[i] {
                gy = gy + self.dwdy[i] * plane[j];
                gx = gx + self.dwdx[i] * plane[j];
            }
        }
        (gy, gx)
    }

    #[inline]
    pub(crate) fn scatter(&self, plane: &mut [T], g: T) {
        for i in 0..4 {
            if let Some(j) = self.idx[i] {
                plane[j] = plane[j] + self.w[i] * g;
            }
        }
    }
}

fn check_grid<T: Scalar>(input: &Tensor<T>, grid: &Tensor<T>, what: &str) -> Result<()> {
    let (n, _, _, _) = input.dims4()?;
    let (gn, gc, _, _) = grid.dims4()?;
    if gn != n || gc != 2 {
        return Err(VsrError::dim(format!(
            "{what}: grid shape {:?} incompatible with input {:?}",
            grid.shape(),
            input.shape()
        )));
    }
    Ok(())
}

/// Shared driver: with `relative` the grid holds displacements added to each
/// pixel's own coordinates (flow warping), otherwise absolute coordinates.
fn sample_impl<T: Scalar>(input: &Tensor<T>, grid: &Tensor<T>, relative: bool) -> Tensor<T> {
    let (n, c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    let (ho, wo) = (grid.shape()[2], grid.shape()[3]);
    let p = ho * wo;
    let mut out = vec![T::zero(); n * c * p];
    for b in 0..n {
        let gx = &grid.data()[(b * 2) * p..(b * 2 + 1) * p];
        let gy = &grid.data()[(b * 2 + 1) * p..(b * 2 + 2) * p];
        for oy in 0..ho {
            for ox in 0..wo {
                let q = oy * wo + ox;
                let (mut x, mut y) = (gx[q], gy[q]);
                if relative {
                    x = x + T::of(ox as f64);
                    y = y + T::of(oy as f64);
                }
                let taps = Taps::new(h, w, y, x);
                for ch in 0..c {
                    let plane = &input.data()[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
                    out[(b * c + ch) * p + q] = taps.sample(plane);
                }
            }
        }
    }
    Tensor::from_vec(&[n, c, ho, wo], out).expect("sample output shape")
}

fn sample_backward_impl<T: Scalar>(
    input: &Tensor<T>,
    grid: &Tensor<T>,
    grad_out: &Tensor<T>,
    relative: bool,
) -> (Tensor<T>, Tensor<T>) {
    let (n, c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    let (ho, wo) = (grid.shape()[2], grid.shape()[3]);
    let p = ho * wo;
    let mut d_in = vec![T::zero(); input.numel()];
    let mut d_grid = vec![T::zero(); grid.numel()];
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                let q = oy * wo + ox;
                let mut x = grid.data()[(b * 2) * p + q];
                let mut y = grid.data()[(b * 2 + 1) * p + q];
                if relative {
                    x = x + T::of(ox as f64);
                    y = y + T::of(oy as f64);
                }
                let taps = Taps::new(h, w, y, x);
                let (mut sx, mut sy) = (T::zero(), T::zero());
                for ch in 0..c {
                    let g = grad_out.data()[(b * c + ch) * p + q];
                    let range = (b * c + ch) * h * w..(b * c + ch + 1) * h * w;
                    let (gy, gx) = taps.grad_coords(&input.data()[range.clone()]);
                    sy = sy + g * gy;
                    sx = sx + g * gx;
                    taps.scatter(&mut d_in[range], g);
                }
                d_grid[(b * 2) * p + q] = sx;
                d_grid[(b * 2 + 1) * p + q] = sy;
            }
        }
    }
    (
        Tensor::from_vec(input.shape(), d_in).expect("shape"),
        Tensor::from_vec(grid.shape(), d_grid).expect("shape"),
    )
}

/// Samples `input` bilinearly at absolute pixel coordinates `coords`
/// (`N × 2 × Ho × Wo`, x then y). Points outside the image read zeros.
pub fn bilinear_sample<T: Scalar>(input: &Tensor<T>, coords: &Tensor<T>) -> Result<Tensor<T>> {
    check_grid(input, coords, "bilinear_sample")?;
    Ok(sample_impl(input, coords, false))
}

/// Gradients of [`bilinear_sample`] for `(input, coords)`.
pub fn bilinear_sample_backward<T: Scalar>(
    input: &Tensor<T>,
    coords: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    check_grid(input, coords, "bilinear_sample")?;
    Ok(sample_backward_impl(input, coords, grad_out, false))
}

fn check_flow<T: Scalar>(feature: &Tensor<T>, flow: &Tensor<T>) -> Result<()> {
    let (n, _, h, w) = feature.dims4()?;
    let (fn_, fc, fh, fw) = flow.dims4()?;
    if (fn_, fc, fh, fw) != (n, 2, h, w) {
        return Err(VsrError::dim(format!(
            "warp: flow shape {:?} does not match feature {:?}",
            flow.shape(),
            feature.shape()
        )));
    }
    Ok(())
}

/// Backward warp: `out(x, y) = feature(x + flow_x, y + flow_y)`.
pub fn warp<T: Scalar>(feature: &Tensor<T>, flow: &Tensor<T>) -> Result<Tensor<T>> {
    check_flow(feature, flow)?;
    Ok(sample_impl(feature, flow, true))
}

/// Gradients of [`warp`] for `(feature, flow)`.
pub fn warp_backward<T: Scalar>(
    feature: &Tensor<T>,
    flow: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    check_flow(feature, flow)?;
    Ok(sample_backward_impl(feature, flow, grad_out, true))
}

/// Absolute sample grid equal to each pixel's own coordinates.
pub fn identity_grid<T: Scalar>(n: usize, h: usize, w: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(n * 2 * h * w);
    for _ in 0..n {
        for _y in 0..h {
            data.extend((0..w).map(|x| T::of(x as f64)));
        }
        for y in 0..h {
            data.extend(std::iter::repeat_n(T::of(y as f64), w));
        }
    }
    Tensor::from_vec(&[n, 2, h, w], data).expect("grid shape")
}

/// Source index pairs and weights for one axis of an align-corners-false
/// bilinear resize.
fn resize_axis(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = if in_len == out_len {
                o as f64
            } else {
                ((o as f64 + 0.5) * scale - 0.5).max(0.0)
            };
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resize with half-pixel (align-corners-false) sample centres.
pub fn resize_bilinear<T: Scalar>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(VsrError::dim(format!("resize from {h}×{w} to {out_h}×{out_w}")));
    }
    if (out_h, out_w) == (h, w) {
        return Ok(input.clone());
    }
    let ys = resize_axis(h, out_h);
    let xs = resize_axis(w, out_w);
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for plane in input.data().chunks(h * w) {
        for &(y0, y1, ly) in &ys {
            let ly = T::of(ly);
            let hy = T::one() - ly;
            for &(x0, x1, lx) in &xs {
                let lx = T::of(lx);
                let hx = T::one() - lx;
                let top = hx * plane[y0 * w + x0] + lx * plane[y0 * w + x1];
                let bot = hx * plane[y1 * w + x0] + lx * plane[y1 * w + x1];
                out.push(hy * top + ly * bot);
            }
        }
    }
    Tensor::from_vec(&[n, c, out_h, out_w], out)
}

/// Gradient of [`resize_bilinear`] with respect to its input.
pub fn resize_bilinear_backward<T: Scalar>(in_shape: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let (_, _, out_h, out_w) = grad_out.dims4()?;
    if (out_h, out_w) == (h, w) {
        return Ok(grad_out.clone());
    }
    let ys = resize_axis(h, out_h);
    let xs = resize_axis(w, out_w);
    let mut d_in = vec![T::zero(); in_shape.iter().product()];
    for (plane, g) in d_in.chunks_mut(h * w).zip(grad_out.data().chunks(out_h * out_w)) {
        for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
            let ly = T::of(ly);
            let hy = T::one() - ly;
            for (ox, &(x0, x1, lx)) in xs.iter().enumerate() {
                let lx = T::of(lx);
                let hx = T::one() - lx;
                let gv = g[oy * out_w + ox];
                plane[y0 * w + x0] = plane[y0 * w + x0] + hy * hx * gv;
                plane[y0 * w + x1] = plane[y0 * w + x1] + hy * lx * gv;
                plane[y1 * w + x0] = plane[y1 * w + x0] + ly * hx * gv;
                plane[y1 * w + x1] = plane[y1 * w + x1] + ly * lx * gv;
            }
        }
    }
    Tensor::from_vec(in_shape, d_in)
}
