//! PSNR, SSIM and the temporal-profile consistency score.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::Clip;
use crate::error::{Result, VsrError};
use crate::tensor::Tensor;

/// Channel convention for metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convention {
    Rgb,
    /// BT.601 luma in the 16–235 range.
    Y,
}

impl Convention {
    pub fn as_str(self) -> &'static str {
        match self {
            Convention::Rgb => "rgb",
            Convention::Y => "y",
        }
    }
}

impl std::str::FromStr for Convention {
    type Err = VsrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rgb" => Ok(Convention::Rgb),
            "y" => Ok(Convention::Y),
            _ => Err(VsrError::Usage(format!("unknown convention {s:?} (rgb|y)"))),
        }
    }
}

/// Planes of `frame` under `conv`, clamped to `[0, 1]`, in f64.
/// Luma is `(65.481 R + 128.553 G + 24.966 B + 16) / 255`.
fn planes(frame: &Tensor, conv: Convention) -> Result<(Vec<Vec<f64>>, usize, usize)> {
    let (n, c, h, w) = frame.dims4()?;
    if c != 3 {
        return Err(VsrError::dim(format!("metrics need RGB frames, got {c} channels")));
    }
    let d = frame.data();
    let plane = h * w;
    let mut out = Vec::new();
    for b in 0..n {
        let ch = |k: usize| {
            d[(b * 3 + k) * plane..(b * 3 + k + 1) * plane]
                .iter()
                .map(|&v| (v as f64).clamp(0.0, 1.0))
        };
        match conv {
            Convention::Rgb => {
                for k in 0..3 {
                    out.push(ch(k).collect());
                }
            }
            Convention::Y => out.push(
                ch(0)
                    .zip(ch(1))
                    .zip(ch(2))
                    .map(|((r, g), bl)| (65.481 * r + 128.553 * g + 24.966 * bl + 16.0) / 255.0)
                    .collect(),
            ),
        }
    }
    Ok((out, h, w))
}

/// PSNR in dB; identical inputs give `f64::INFINITY`.
pub fn psnr(pred: &Tensor, target: &Tensor, conv: Convention) -> Result<f64> {
    pred.expect_same_shape(target, "psnr")?;
    let (a, _, _) = planes(pred, conv)?;
    let (b, _, _) = planes(target, conv)?;
    let (mut se, mut count) = (0.0, 0usize);
    for (pa, pb) in a.iter().zip(&b) {
        for (x, y) in pa.iter().zip(pb) {
            se += (x - y) * (x - y);
        }
        count += pa.len();
    }
    let mse = se / count as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    })
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, win: &[f64]) -> (f64, usize) {
    const C1: f64 = 0.01 * 0.01;
    const C2: f64 = 0.03 * 0.03;
    let k = win.len();
    let (mut total, mut count) = (0.0, 0);
    for y in 0..=h - k {
        for x in 0..=w - k {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let g = win[i] * win[j];
                    let (va, vb) = (a[(y + i) * w + x + j], b[(y + i) * w + x + j]);
                    ma += g * va;
                    mb += g * vb;
                    saa += g * va * va;
                    sbb += g * vb * vb;
                    sab += g * va * vb;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
            count += 1;
        }
    }
    (total, count)
}

/// Single-scale SSIM with an 11×11 Gaussian window (σ = 1.5), averaged over
/// valid window positions of every plane.
pub fn ssim(pred: &Tensor, target: &Tensor, conv: Convention) -> Result<f64> {
    pred.expect_same_shape(target, "ssim")?;
    let (a, h, w) = planes(pred, conv)?;
    let (b, _, _) = planes(target, conv)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(VsrError::dim(format!(
            "ssim needs frames of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {h}×{w}"
        )));
    }
    let win = super::degrade::gaussian_kernel(SSIM_SIGMA, SSIM_WINDOW);
    let (mut total, mut count) = (0.0, 0);
    for (pa, pb) in a.iter().zip(&b) {
        let (t, c) = ssim_plane(pa, pb, h, w, &win);
        total += t;
        count += c;
    }
    Ok(total / count as f64)
}

/// Column `column` of every frame stacked in time: a `1 × 3 × T × H` image
/// whose row `t` is frame `t`'s column. Also returns the consistency
/// score, the mean absolute difference between consecutive rows.
pub fn temporal_profile(clip: &Clip, column: usize) -> Result<(Tensor, f64)> {
    let (_, c, h, w) = clip.frames[0].dims4()?;
    if column >= w {
        return Err(VsrError::Usage(format!("column {column} outside width {w}")));
    }
    let t = clip.frames.len();
    let mut img = Tensor::zeros(&[1, c, t, h]);
    for (ti, f) in clip.frames.iter().enumerate() {
        for ch in 0..c {
            for y in 0..h {
                img.set4(0, ch, ti, y, f.at4(0, ch, y, column));
            }
        }
    }
    let mut diff = 0.0f64;
    let mut count = 0usize;
    for ch in 0..c {
        for ti in 1..t {
            for y in 0..h {
                diff += (img.at4(0, ch, ti, y) as f64 - img.at4(0, ch, ti - 1, y) as f64).abs();
                count += 1;
            }
        }
    }
    Ok((img, if count == 0 { 0.0 } else { diff / count as f64 }))
}

/// One row of the metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub clip: String,
    pub frame: usize,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-frame metrics of `pred` against `gt`.
pub fn evaluate_clip(pred: &Clip, gt: &Clip, conv: Convention) -> Result<Vec<MetricRow>> {
    if pred.frames.len() != gt.frames.len() {
        return Err(VsrError::Usage(format!(
            "frame count mismatch: {} predicted, {} ground truth",
            pred.frames.len(),
            gt.frames.len()
        )));
    }
    pred.frames
        .iter()
        .zip(&gt.frames)
        .enumerate()
        .map(|(i, (p, g))| {
            Ok(MetricRow {
                clip: gt.id.clone(),
                frame: i,
                psnr: psnr(p, g, conv)?,
                ssim: ssim(p, g, conv)?,
            })
        })
        .collect()
}

/// Mean PSNR and SSIM; infinite PSNRs keep the mean infinite.
pub fn mean_metrics(rows: &[MetricRow]) -> (f64, f64) {
    let n = rows.len().max(1) as f64;
    (
        rows.iter().map(|r| r.psnr).sum::<f64>() / n,
        rows.iter().map(|r| r.ssim).sum::<f64>() / n,
    )
}

fn fmt_psnr(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

/// CSV text: a comment recording the convention, the header, per-frame rows
/// and one `mean` row per clip.
pub fn metrics_csv(rows: &[MetricRow], conv: Convention) -> String {
    let mut s = format!("# convention={} crop=none\nclip,frame,psnr,ssim\n", conv.as_str());
    let mut clips: Vec<&str> = Vec::new();
    for r in rows {
        let _ = writeln!(s, "{},{},{},{:.6}", r.clip, r.frame, fmt_psnr(r.psnr), r.ssim);
        if !clips.contains(&r.clip.as_str()) {
            clips.push(&r.clip);
        }
    }
    for c in clips {
        let sel: Vec<MetricRow> = rows.iter().filter(|r| r.clip == c).cloned().collect();
        let (p, q) = mean_metrics(&sel);
        let _ = writeln!(s, "{c},mean,{},{q:.6}", fmt_psnr(p));
    }
    s
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricRow], conv: Convention) -> Result<()> {
    std::fs::write(path, metrics_csv(rows, conv)).map_err(|e| VsrError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_error_gives_20db() {
        let t = Tensor::full(&[1, 3, 4, 4], 0.5f32);
        let p = Tensor::full(&[1, 3, 4, 4], 0.6f32);
        assert!((psnr(&p, &t, Convention::Rgb).unwrap() - 20.0).abs() < 1e-5);
        assert_eq!(psnr(&t, &t, Convention::Y).unwrap(), f64::INFINITY);
    }

    #[test]
    fn ssim_identity_and_size_check() {
        let t = Tensor::full(&[1, 3, 12, 12], 0.3f32);
        assert!((ssim(&t, &t, Convention::Rgb).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(
            &Tensor::zeros(&[1, 3, 10, 12]),
            &Tensor::zeros(&[1, 3, 10, 12]),
            Convention::Y
        )
        .is_err());
    }

    #[test]
    fn csv_has_header_and_means() {
        let rows = vec![
            MetricRow {
                clip: "a".into(),
                frame: 0,
                psnr: 30.0,
                ssim: 0.9,
            },
            MetricRow {
                clip: "a".into(),
                frame: 1,
                psnr: f64::INFINITY,
                ssim: 1.0,
            },
        ];
        let s = metrics_csv(&rows, Convention::Y);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "# convention=y crop=none");
        assert_eq!(lines[1], "clip,frame,psnr,ssim");
        assert_eq!(lines[3], "a,1,inf,1.000000");
        assert_eq!(lines[4], "a,mean,inf,0.950000");
    }
}
