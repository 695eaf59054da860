//! Modulated deformable convolution (DCNv2 semantics).
//!
//! Offsets are `N × (G·kh·kw·2) × Ho × Wo`. Channel `(g·kh·kw + tap)·2`
//! holds the vertical (y) displacement of that tap and the next channel the
//! horizontal (x) one; taps are numbered row-major over the kernel. Masks
//! are `N × (G·kh·kw) × Ho × Wo` with channel `g·kh·kw + tap`. Deformable
//! group `g` covers the contiguous input channels
//! `g·Cin/G .. (g+1)·Cin/G`. Samples outside the image read zero.

use crate::error::{Result, VsrError};
use crate::kernels::sample::Taps;
use crate::parallel::map_indexed;
use crate::scalar::{matmul, Scalar};
use crate::tensor::{ConvSpec, Tensor};

use super::conv::check_conv_args;

/// Offset channel holding the y displacement of `(group, tap)`; x is the next one.
pub fn offset_channel(group: usize, tap: usize, taps: usize) -> usize {
    (group * taps + tap) * 2
}

/// Mask channel of `(group, tap)`.
pub fn mask_channel(group: usize, tap: usize, taps: usize) -> usize {
    group * taps + tap
}

struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    groups: usize,
}

fn check_deform_args<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    offsets: &Tensor<T>,
    masks: &Tensor<T>,
    groups: usize,
    spec: &ConvSpec,
) -> Result<Geometry> {
    let (n, c, h, w, ho, wo) = check_conv_args(input, weight, bias, spec)?;
    if groups == 0 || c % groups != 0 {
        return Err(VsrError::dim(format!(
            "{c} input channels not divisible into {groups} deformable groups"
        )));
    }
    let taps = spec.taps();
    let want_off = [n, groups * taps * 2, ho, wo];
    let want_mask = [n, groups * taps, ho, wo];
    if offsets.shape() != want_off {
        return Err(VsrError::dim(format!(
            "offset shape {:?}, expected {want_off:?}",
            offsets.shape()
        )));
    }
    if masks.shape() != want_mask {
        return Err(VsrError::dim(format!(
            "mask shape {:?}, expected {want_mask:?}",
            masks.shape()
        )));
    }
    Ok(Geometry {
        n,
        c,
        h,
        w,
        ho,
        wo,
        groups,
    })
}

/// Visits every `(channel, tap, output position)` sample of batch item `b`
/// with its bilinear taps and modulation value.
fn for_each_sample<T: Scalar>(
    geo: &Geometry,
    spec: &ConvSpec,
    offsets: &[T],
    masks: &[T],
    mut visit: impl FnMut(usize, usize, usize, &Taps<T>, T),
) {
    let taps = spec.taps();
    let p = geo.ho * geo.wo;
    let per_group = geo.c / geo.groups;
    for g in 0..geo.groups {
        for tap in 0..taps {
            let (ky, kx) = (tap / spec.kernel_w, tap % spec.kernel_w);
            let oc = offset_channel(g, tap, taps);
            let off_y = &offsets[oc * p..(oc + 1) * p];
            let off_x = &offsets[(oc + 1) * p..(oc + 2) * p];
            let m = &masks[mask_channel(g, tap, taps) * p..][..p];
            for oy in 0..geo.ho {
                let base_y = (oy * spec.stride) as f64 - spec.padding as f64 + ky as f64;
                for ox in 0..geo.wo {
                    let q = oy * geo.wo + ox;
                    let base_x = (ox * spec.stride) as f64 - spec.padding as f64 + kx as f64;
                    let t = Taps::new(geo.h, geo.w, T::of(base_y) + off_y[q], T::of(base_x) + off_x[q]);
                    for ch in g * per_group..(g + 1) * per_group {
                        visit(ch, tap, q, &t, m[q]);
                    }
                }
            }
        }
    }
}

fn deform_im2col<T: Scalar>(geo: &Geometry, spec: &ConvSpec, img: &[T], offsets: &[T], masks: &[T]) -> Vec<T> {
    let taps = spec.taps();
    let p = geo.ho * geo.wo;
    let plane = geo.h * geo.w;
    let mut cols = vec![T::zero(); geo.c * taps * p];
    for_each_sample(geo, spec, offsets, masks, |ch, tap, q, t, m| {
        cols[(ch * taps + tap) * p + q] = m * t.sample(&img[ch * plane..(ch + 1) * plane]);
    });
    cols
}

/// Modulated deformable convolution: every kernel tap samples the input at
/// its nominal position plus its learned offset, is scaled by its mask and
/// then accumulated with the convolution weight.
#[allow(clippy::too_many_arguments)]
pub fn deform_conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    offsets: &Tensor<T>,
    masks: &Tensor<T>,
    groups: usize,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let geo = check_deform_args(input, weight, bias, offsets, masks, groups, spec)?;
    let taps = spec.taps();
    let p = geo.ho * geo.wo;
    let co = spec.out_channels;
    let k = geo.c * taps;
    let item = geo.c * geo.h * geo.w;
    let outs = map_indexed(geo.n, |b| {
        let cols = deform_im2col(
            &geo,
            spec,
            &input.data()[b * item..(b + 1) * item],
            &offsets.data()[b * groups * taps * 2 * p..(b + 1) * groups * taps * 2 * p],
            &masks.data()[b * groups * taps * p..(b + 1) * groups * taps * p],
        );
        let mut out = vec![T::zero(); co * p];
        matmul(co, k, p, weight.data(), false, &cols, false, &mut out, false);
        if let Some(bias) = bias {
            for (row, &bv) in out.chunks_mut(p).zip(bias.data()) {
                row.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
        out
    });
    Tensor::from_vec(&[geo.n, co, geo.ho, geo.wo], outs.concat())
}

/// Gradients of [`deform_conv2d`].
pub struct DeformGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub offsets: Tensor<T>,
    pub masks: Tensor<T>,
}

#[allow(clippy::too_many_arguments)]
pub fn deform_conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    offsets: &Tensor<T>,
    masks: &Tensor<T>,
    groups: usize,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
) -> Result<DeformGrads<T>> {
    let bias_stub = spec.has_bias.then(|| Tensor::zeros(&[spec.out_channels]));
    let geo = check_deform_args(input, weight, bias_stub.as_ref(), offsets, masks, groups, spec)?;
    let taps = spec.taps();
    let p = geo.ho * geo.wo;
    let co = spec.out_channels;
    let k = geo.c * taps;
    let item = geo.c * geo.h * geo.w;
    let plane = geo.h * geo.w;
    let off_len = groups * taps * 2 * p;
    let mask_len = groups * taps * p;
    if grad_out.shape() != [geo.n, co, geo.ho, geo.wo] {
        return Err(VsrError::dim(format!(
            "deform grad shape {:?}, expected {:?}",
            grad_out.shape(),
            [geo.n, co, geo.ho, geo.wo]
        )));
    }
    let parts = map_indexed(geo.n, |b| {
        let img = &input.data()[b * item..(b + 1) * item];
        let off = &offsets.data()[b * off_len..(b + 1) * off_len];
        let msk = &masks.data()[b * mask_len..(b + 1) * mask_len];
        let g = &grad_out.data()[b * co * p..(b + 1) * co * p];
        let cols = deform_im2col(&geo, spec, img, off, msk);
        let mut dw = vec![T::zero(); co * k];
        matmul(co, p, k, g, false, &cols, true, &mut dw, false);
        let mut dcols = cols;
        matmul(k, co, p, weight.data(), true, g, false, &mut dcols, false);
        let db: Vec<T> = g.chunks(p).map(|row| row.iter().copied().sum()).collect();

        let mut dx = vec![T::zero(); item];
        let mut doff = vec![T::zero(); off_len];
        let mut dmask = vec![T::zero(); mask_len];
        let per_group = geo.c / groups;
        for_each_sample(&geo, spec, off, msk, |ch, tap, q, t, m| {
            let gc = dcols[(ch * taps + tap) * p + q];
            if gc == T::zero() {
                return;
            }
            let src = &img[ch * plane..(ch + 1) * plane];
            let grp = ch / per_group;
            dmask[mask_channel(grp, tap, taps) * p + q] =
                dmask[mask_channel(grp, tap, taps) * p + q] + gc * t.sample(src);
            let (gy, gx) = t.grad_coords(src);
            let oc = offset_channel(grp, tap, taps);
            doff[oc * p + q] = doff[oc * p + q] + gc * m * gy;
            doff[(oc + 1) * p + q] = doff[(oc + 1) * p + q] + gc * m * gx;
            t.scatter(&mut dx[ch * plane..(ch + 1) * plane], gc * m);
        });
        (dx, dw, db, doff, dmask)
    });
    let mut dx = Vec::with_capacity(geo.n * item);
    let mut doff = Vec::with_capacity(geo.n * off_len);
    let mut dmask = Vec::with_capacity(geo.n * mask_len);
    let mut dw = vec![T::zero(); co * k];
    let mut db = vec![T::zero(); co];
    for (px, pw, pb, po, pm) in parts {
        dx.extend_from_slice(&px);
        doff.extend_from_slice(&po);
        dmask.extend_from_slice(&pm);
        dw.iter_mut().zip(&pw).for_each(|(a, &v)| *a = *a + v);
        db.iter_mut().zip(&pb).for_each(|(a, &v)| *a = *a + v);
    }
    Ok(DeformGrads {
        input: Tensor::from_vec(input.shape(), dx)?,
        weight: Tensor::from_vec(&spec.weight_shape(), dw)?,
        bias: if spec.has_bias {
            Some(Tensor::from_vec(&[co], db)?)
        } else {
            None
        },
        offsets: Tensor::from_vec(offsets.shape(), doff)?,
        masks: Tensor::from_vec(masks.shape(), dmask)?,
    })
}

/// Adds optical flow as base offsets.
///
/// `raw` holds `flows.len()` consecutive blocks of `groups_per_flow · taps`
/// offset pairs; block `p` receives `flows[p]` in every `(group, tap)` slot.
/// Flows store x in channel 0 and y in channel 1 while offsets store y
/// first, so this is the one place the two conventions meet.
pub fn add_flow_to_offsets<T: Scalar>(
    raw: &Tensor<T>,
    flows: &[&Tensor<T>],
    groups_per_flow: usize,
    taps: usize,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = raw.dims4()?;
    let block = groups_per_flow * taps * 2;
    if c != flows.len() * block {
        return Err(VsrError::dim(format!(
            "{c} offset channels, expected {} flows × {groups_per_flow} groups × {taps} taps × 2",
            flows.len()
        )));
    }
    for f in flows {
        if f.shape() != [n, 2, h, w] {
            return Err(VsrError::dim(format!(
                "flow shape {:?}, expected {:?}",
                f.shape(),
                [n, 2, h, w]
            )));
        }
    }
    let plane = h * w;
    let mut out = raw.clone();
    let data = out.data_mut();
    for b in 0..n {
        for (pi, f) in flows.iter().enumerate() {
            let fx = &f.data()[(b * 2) * plane..(b * 2 + 1) * plane];
            let fy = &f.data()[(b * 2 + 1) * plane..(b * 2 + 2) * plane];
            for slot in 0..groups_per_flow * taps {
                let ch = pi * block + slot * 2;
                let y_row = &mut data[(b * c + ch) * plane..(b * c + ch + 1) * plane];
                y_row.iter_mut().zip(fy).for_each(|(o, &v)| *o = *o + v);
                let x_row = &mut data[(b * c + ch + 1) * plane..(b * c + ch + 2) * plane];
                x_row.iter_mut().zip(fx).for_each(|(o, &v)| *o = *o + v);
            }
        }
    }
    Ok(out)
}

/// Flow gradients of [`add_flow_to_offsets`] (the raw gradient is `grad` itself).
pub fn add_flow_to_offsets_backward<T: Scalar>(
    grad: &Tensor<T>,
    num_flows: usize,
    groups_per_flow: usize,
    taps: usize,
) -> Result<Vec<Tensor<T>>> {
    let (n, c, h, w) = grad.dims4()?;
    let block = groups_per_flow * taps * 2;
    if c != num_flows * block {
        return Err(VsrError::dim("offset gradient channel count"));
    }
    let plane = h * w;
    (0..num_flows)
        .map(|pi| {
            let mut df = vec![T::zero(); n * 2 * plane];
            for b in 0..n {
                for slot in 0..groups_per_flow * taps {
                    let ch = pi * block + slot * 2;
                    // offset slot (y, x) at (ch, ch + 1) maps to flow channels (1, 0)
                    for (src_ch, flow_ch) in [(ch, 1usize), (ch + 1, 0usize)] {
                        let src = &grad.data()[(b * c + src_ch) * plane..][..plane];
                        let d = &mut df[(b * 2 + flow_ch) * plane..][..plane];
                        d.iter_mut().zip(src).for_each(|(a, &v)| *a = *a + v);
                    }
                }
            }
            Tensor::from_vec(&[n, 2, h, w], df)
        })
        .collect()
}
