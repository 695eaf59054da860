//! BI (imresize-style bicubic) and BD (Gaussian blur + subsample) degradations.

use crate::error::{Result, VsrError};
use crate::tensor::Tensor;

/// Cubic convolution parameter of the bicubic kernel.
pub const BICUBIC_A: f64 = -0.5;
pub const DEFAULT_BD_SIGMA: f64 = 1.6;
/// Taps of the BD Gaussian.
pub const BD_KERNEL_SIZE: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegradationMode {
    Bi,
    Bd,
}

impl std::str::FromStr for DegradationMode {
    type Err = VsrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "BI" => Ok(DegradationMode::Bi),
            "BD" => Ok(DegradationMode::Bd),
            _ => Err(VsrError::Usage(format!("unknown degradation mode {s:?} (BI|BD)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradationSpec {
    pub mode: DegradationMode,
    pub scale: usize,
    pub sigma: f64,
}

impl DegradationSpec {
    pub fn bi(scale: usize) -> Self {
        DegradationSpec {
            mode: DegradationMode::Bi,
            scale,
            sigma: DEFAULT_BD_SIGMA,
        }
    }

    pub fn bd(scale: usize, sigma: f64) -> Self {
        DegradationSpec {
            mode: DegradationMode::Bd,
            scale,
            sigma,
        }
    }

    pub fn apply(&self, frame: &Tensor) -> Result<Tensor> {
        if self.scale < 2 {
            return Err(VsrError::Usage(format!("scale must be ≥ 2, got {}", self.scale)));
        }
        match self.mode {
            DegradationMode::Bi => degrade_bi(frame, self.scale),
            DegradationMode::Bd => degrade_bd(frame, self.sigma, self.scale),
        }
    }
}

/// Keys cubic convolution kernel.
pub fn cubic(x: f64, a: f64) -> f64 {
    let t = x.abs();
    if t <= 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Contributions of input samples to each output sample along one axis.
pub type AxisWeights = Vec<Vec<(usize, f64)>>;

/// Mirror index into `0..len` with the edge sample repeated.
fn symmetric(i: i64, len: usize) -> usize {
    let n = len as i64;
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

/// imresize-style bicubic weights for resizing `in_len` samples to `out_len`.
///
/// Output sample `i` sits at input coordinate `(i + 0.5) / s - 0.5` with
/// `s = out_len / in_len`. When shrinking, the kernel is stretched by `1/s`
/// (antialiasing). Weights are normalized per output and indices outside
/// the input are mirrored.
pub fn bicubic_axis_weights(in_len: usize, out_len: usize) -> AxisWeights {
    let s = out_len as f64 / in_len as f64;
    let (kscale, width) = if s < 1.0 { (s, 4.0 / s) } else { (1.0, 4.0) };
    let taps = width.ceil() as i64 + 2;
    (0..out_len)
        .map(|i| {
            let u = (i as f64 + 0.5) / s - 0.5;
            let left = (u - width / 2.0).floor() as i64;
            let raw: Vec<(i64, f64)> = (0..taps)
                .map(|k| {
                    let j = left + k;
                    (j, kscale * cubic(kscale * (u - j as f64), BICUBIC_A))
                })
                .collect();
            let total: f64 = raw.iter().map(|r| r.1).sum();
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(raw.len());
            for (j, w) in raw {
                if w == 0.0 {
                    continue;
                }
                let idx = symmetric(j, in_len);
                match merged.iter_mut().find(|m| m.0 == idx) {
                    Some(m) => m.1 += w / total,
                    None => merged.push((idx, w / total)),
                }
            }
            merged
        })
        .collect()
}

fn check_divisible(frame: &Tensor, scale: usize) -> Result<(usize, usize, usize, usize)> {
    let (n, c, h, w) = frame.dims4()?;
    if scale == 0 || h % scale != 0 || w % scale != 0 {
        return Err(VsrError::dim(format!(
            "frame {h}×{w} is not divisible by scale {scale}; crop it first"
        )));
    }
    Ok((n, c, h, w))
}

/// Separable resampling in f64: rows (height) first, then columns.
fn resample(frame: &Tensor, rows: &AxisWeights, cols: &AxisWeights) -> Result<Tensor> {
    let (n, c, h, w) = frame.dims4()?;
    let (oh, ow) = (rows.len(), cols.len());
    let src = frame.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut tmp = vec![0.0f64; oh * w];
    for plane in src.chunks_exact(h * w) {
        for (oy, taps) in rows.iter().enumerate() {
            for x in 0..w {
                tmp[oy * w + x] = taps.iter().map(|&(y, k)| k * plane[y * w + x] as f64).sum();
            }
        }
        for oy in 0..oh {
            for taps in cols {
                out.push(taps.iter().map(|&(x, k)| k * tmp[oy * w + x]).sum::<f64>() as f32);
            }
        }
    }
    Tensor::from_vec(&[n, c, oh, ow], out)
}

/// Bicubic resize to `out_h × out_w` (antialiased when shrinking).
pub fn imresize_bicubic(frame: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (_, _, h, w) = frame.dims4()?;
    if h == 0 || w == 0 || out_h == 0 || out_w == 0 {
        return Err(VsrError::dim("cannot resize empty frames"));
    }
    resample(frame, &bicubic_axis_weights(h, out_h), &bicubic_axis_weights(w, out_w))
}

/// BI degradation: antialiased bicubic downsampling by `scale`.
pub fn degrade_bi(frame: &Tensor, scale: usize) -> Result<Tensor> {
    let (_, _, h, w) = check_divisible(frame, scale)?;
    imresize_bicubic(frame, h / scale, w / scale)
}

/// Bicubic upsampling by `scale`, the per-frame baseline.
pub fn bicubic_upsample(frame: &Tensor, scale: usize) -> Result<Tensor> {
    let (_, _, h, w) = frame.dims4()?;
    imresize_bicubic(frame, h * scale, w * scale)
}

/// Normalized 1-D Gaussian with `size` taps centred on the middle one.
pub fn gaussian_kernel(sigma: f64, size: usize) -> Vec<f64> {
    let r = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let x = i as f64 - r;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Mirror index into `0..len` without repeating the edge sample.
fn reflect(i: i64, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as i64 - 1);
    let m = i.rem_euclid(period);
    (if m < len as i64 { m } else { period - m }) as usize
}

/// Separable Gaussian blur with reflect padding.
pub fn gaussian_blur(frame: &Tensor, sigma: f64, size: usize) -> Result<Tensor> {
    let (_, _, h, w) = frame.dims4()?;
    let k = gaussian_kernel(sigma, size);
    let r = (size / 2) as i64;
    let axis = |len: usize| -> AxisWeights {
        (0..len)
            .map(|i| {
                k.iter()
                    .enumerate()
                    .map(|(t, &v)| (reflect(i as i64 + t as i64 - r, len), v))
                    .collect()
            })
            .collect()
    };
    resample(frame, &axis(h), &axis(w))
}

/// BD degradation: 13-tap Gaussian blur, then every `scale`-th pixel from index 0.
pub fn degrade_bd(frame: &Tensor, sigma: f64, scale: usize) -> Result<Tensor> {
    let (n, c, h, w) = check_divisible(frame, scale)?;
    if !(sigma > 0.0) {
        return Err(VsrError::Usage(format!("sigma must be positive, got {sigma}")));
    }
    let blurred = gaussian_blur(frame, sigma, BD_KERNEL_SIZE)?;
    let (oh, ow) = (h / scale, w / scale);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..oh {
                for x in 0..ow {
                    out.set4(b, ch, y, x, blurred.at4(b, ch, y * scale, x * scale));
                }
            }
        }
    }
    Ok(out)
}
