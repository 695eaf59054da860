//! Cross-correlation via im2col and GEMM.

use crate::error::{Result, VsrError};
use crate::parallel::map_indexed;
use crate::scalar::{matmul, Scalar};
use crate::tensor::{ConvSpec, Tensor};

pub(crate) fn check_conv_args<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let (n, c, h, w) = input.dims4()?;
    if c != spec.in_channels {
        return Err(VsrError::dim(format!(
            "conv input has {c} channels, layer expects {}",
            spec.in_channels
        )));
    }
    if weight.shape() != spec.weight_shape() {
        return Err(VsrError::dim(format!(
            "conv weight shape {:?}, expected {:?}",
            weight.shape(),
            spec.weight_shape()
        )));
    }
    match (bias, spec.has_bias) {
        (Some(b), true) if b.shape() == [spec.out_channels] => {}
        (None, false) => {}
        (Some(b), true) => {
            return Err(VsrError::dim(format!(
                "conv bias shape {:?}, expected [{}]",
                b.shape(),
                spec.out_channels
            )))
        }
        (Some(_), false) => return Err(VsrError::dim("bias given for a bias-free layer")),
        (None, true) => return Err(VsrError::dim("layer expects a bias tensor")),
    }
    let (ho, wo) = spec.output_size(h, w)?;
    Ok((n, c, h, w, ho, wo))
}

/// Unrolls one image `c × h × w` into `(c·kh·kw) × (ho·wo)` columns.
pub(crate) fn im2col<T: Scalar>(
    img: &[T],
    c: usize,
    h: usize,
    w: usize,
    spec: &ConvSpec,
    ho: usize,
    wo: usize,
    cols: &mut [T],
) {
    let (kh, kw, s, pad) = (spec.kernel_h, spec.kernel_w, spec.stride, spec.padding as isize);
    let p = ho * wo;
    for ch in 0..c {
        let plane = &img[ch * h * w..(ch + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &mut cols[((ch * kh + ky) * kw + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * s) as isize - pad + ky as isize;
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * s) as isize - pad + kx as isize;
                        *d = if ix >= 0 && ix < w as isize {
                            src[ix as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back into an image, accumulating.
pub(crate) fn col2im<T: Scalar>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    spec: &ConvSpec,
    ho: usize,
    wo: usize,
    img: &mut [T],
) {
    let (kh, kw, s, pad) = (spec.kernel_h, spec.kernel_w, spec.stride, spec.padding as isize);
    let p = ho * wo;
    for ch in 0..c {
        let plane = &mut img[ch * h * w..(ch + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &cols[((ch * kh + ky) * kw + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * s) as isize - pad + ky as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * s) as isize - pad + kx as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] = dst[ix as usize] + row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Zero-padded 2-D cross-correlation (no kernel flip).
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let (n, c, h, w, ho, wo) = check_conv_args(input, weight, bias, spec)?;
    let k = c * spec.taps();
    let p = ho * wo;
    let co = spec.out_channels;
    let item = c * h * w;
    let outs = map_indexed(n, |b| {
        let img = &input.data()[b * item..(b + 1) * item];
        let mut out = vec![T::zero(); co * p];
        if spec.taps() == 1 && spec.stride == 1 && spec.padding == 0 {
            matmul(co, k, p, weight.data(), false, img, false, &mut out, false);
        } else {
            let mut cols = vec![T::zero(); k * p];
            im2col(img, c, h, w, spec, ho, wo, &mut cols);
            matmul(co, k, p, weight.data(), false, &cols, false, &mut out, false);
        }
        if let Some(bias) = bias {
            for (row, &bv) in out.chunks_mut(p).zip(bias.data()) {
                row.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
        out
    });
    Tensor::from_vec(&[n, co, ho, wo], outs.concat())
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub struct Conv2dGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
) -> Result<Conv2dGrads<T>> {
    let (n, c, h, w) = input.dims4()?;
    let (ho, wo) = spec.output_size(h, w)?;
    let co = spec.out_channels;
    if grad_out.shape() != [n, co, ho, wo] {
        return Err(VsrError::dim(format!(
            "conv grad shape {:?}, expected {:?}",
            grad_out.shape(),
            [n, co, ho, wo]
        )));
    }
    let k = c * spec.taps();
    let p = ho * wo;
    let item = c * h * w;
    let parts = map_indexed(n, |b| {
        let img = &input.data()[b * item..(b + 1) * item];
        let g = &grad_out.data()[b * co * p..(b + 1) * co * p];
        let mut cols = vec![T::zero(); k * p];
        im2col(img, c, h, w, spec, ho, wo, &mut cols);
        let mut dw = vec![T::zero(); co * k];
        matmul(co, p, k, g, false, &cols, true, &mut dw, false);
        let mut dcols = cols;
        matmul(k, co, p, weight.data(), true, g, false, &mut dcols, false);
        let mut dx = vec![T::zero(); item];
        col2im(&dcols, c, h, w, spec, ho, wo, &mut dx);
        let db: Vec<T> = g.chunks(p).map(|row| row.iter().copied().sum()).collect();
        (dx, dw, db)
    });
    let mut dx = Vec::with_capacity(n * item);
    let mut dw = vec![T::zero(); co * k];
    let mut db = vec![T::zero(); co];
    for (px, pw, pb) in parts {
        dx.extend_from_slice(&px);
        dw.iter_mut().zip(&pw).for_each(|(a, &b)| *a = *a + b);
        db.iter_mut().zip(&pb).for_each(|(a, &b)| *a = *a + b);
    }
    Ok(Conv2dGrads {
        input: Tensor::from_vec(&[n, c, h, w], dx)?,
        weight: Tensor::from_vec(&spec.weight_shape(), dw)?,
        bias: if spec.has_bias {
            Some(Tensor::from_vec(&[co], db)?)
        } else {
            None
        },
    })
}
