//! Sub-pixel rearrangement between channels and space.

use crate::error::{Result, VsrError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `(N, C·r², H, W) → (N, C, H·r, W·r)` with
/// `out[n, c, h·r + i, w·r + j] = in[n, c·r² + i·r + j, h, w]`.
pub fn pixel_shuffle<T: Scalar>(input: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    if r == 0 || c % (r * r) != 0 {
        return Err(VsrError::dim(format!(
            "pixel_shuffle: {c} channels not divisible by {r}²"
        )));
    }
    let co = c / (r * r);
    let (ho, wo) = (h * r, w * r);
    let src = input.data();
    let mut out = vec![T::zero(); src.len()];
    for b in 0..n {
        for oc in 0..co {
            for i in 0..r {
                for j in 0..r {
                    let ic = oc * r * r + i * r + j;
                    let plane = &src[(b * c + ic) * h * w..(b * c + ic + 1) * h * w];
                    for y in 0..h {
                        let row = ((b * co + oc) * ho + y * r + i) * wo;
                        for x in 0..w {
                            out[row + x * r + j] = plane[y * w + x];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, co, ho, wo], out)
}

/// Inverse of [`pixel_shuffle`]: `(N, C, H·r, W·r) → (N, C·r², H, W)`.
pub fn pixel_unshuffle<T: Scalar>(input: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(VsrError::dim(format!("pixel_unshuffle: {h}×{w} not divisible by {r}")));
    }
    let (ho, wo) = (h / r, w / r);
    let co = c * r * r;
    let src = input.data();
    let mut out = vec![T::zero(); src.len()];
    for b in 0..n {
        for ic in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let oc = ic * r * r + i * r + j;
                    let dst = &mut out[(b * co + oc) * ho * wo..(b * co + oc + 1) * ho * wo];
                    for y in 0..ho {
                        let row = ((b * c + ic) * h + y * r + i) * w;
                        for x in 0..wo {
                            dst[y * wo + x] = src[row + x * r + j];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, co, ho, wo], out)
}
