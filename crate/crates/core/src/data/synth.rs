//! Procedural HR clips with known motion.
//!
//! Every frame is an analytic pattern evaluated at transformed coordinates,
//! so sub-pixel motion is exact and the recorded motion is ground truth.

use std::f64::consts::PI;

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Clip;
use crate::error::{Result, VsrError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SynthKind {
    /// Soft checkerboard plus fine texture, constant-velocity translation.
    Translate,
    /// Same content rotating and zooming about the frame centre.
    RotateZoom,
    /// Band-limited sinusoidal noise, constant-velocity translation.
    TextureNoise,
}

impl SynthKind {
    pub const ALL: [SynthKind; 3] = [SynthKind::Translate, SynthKind::RotateZoom, SynthKind::TextureNoise];

    pub fn as_str(self) -> &'static str {
        match self {
            SynthKind::Translate => "translate",
            SynthKind::RotateZoom => "rotate_zoom",
            SynthKind::TextureNoise => "texture_noise",
        }
    }
}

impl std::str::FromStr for SynthKind {
    type Err = VsrError;

    fn from_str(s: &str) -> Result<Self> {
        SynthKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| {
            VsrError::Usage(format!(
                "unknown synthetic kind {s:?} (translate|rotate_zoom|texture_noise)"
            ))
        })
    }
}

/// Motion of frame `t` relative to frame 0, in HR pixels / radians.
///
/// Frame `t` at pixel `x` shows the content frame 0 has at
/// `R(-angle)·(x − centre − (dx, dy)) / zoom + centre`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FrameMotion {
    pub dx: f64,
    pub dy: f64,
    pub angle: f64,
    pub zoom: f64,
}

/// HR size and motion controls for [`synth_clip_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub height: usize,
    pub width: usize,
    /// Per-frame velocity `(vx, vy)` in HR pixels; `None` draws one from the seed.
    pub velocity: Option<(f64, f64)>,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            height: 64,
            width: 64,
            velocity: None,
        }
    }
}

/// Highest spatial frequency of the texture-noise kind, in cycles per HR pixel.
pub const NOISE_MAX_FREQ: f64 = 0.1;

struct Wave {
    fx: f64,
    fy: f64,
    phase: f64,
    amp: [f64; 3],
}

struct Pattern {
    waves: Vec<Wave>,
    checker: Option<(f64, f64, [f64; 3])>,
}

impl Pattern {
    fn new(kind: SynthKind, rng: &mut ChaCha8Rng) -> Self {
        let (count, fmin, fmax) = match kind {
            SynthKind::TextureNoise => (24, 0.01, NOISE_MAX_FREQ),
            _ => (10, 0.03, 0.3),
        };
        let mut waves = Vec::with_capacity(count);
        for _ in 0..count {
            let f = rng.random_range(fmin..fmax);
            let theta = rng.random_range(0.0..PI);
            let base = rng.random_range(0.3..1.0);
            let amp = [0, 1, 2].map(|_| base * rng.random_range(0.6..1.0));
            waves.push(Wave {
                fx: f * theta.cos(),
                fy: f * theta.sin(),
                phase: rng.random_range(0.0..2.0 * PI),
                amp,
            });
        }
        let norm: f64 = waves.iter().map(|w| w.amp.iter().cloned().fold(0.0, f64::max)).sum();
        let budget = if kind == SynthKind::TextureNoise { 0.45 } else { 0.2 };
        for w in &mut waves {
            for a in &mut w.amp {
                *a *= budget / norm;
            }
        }
        let checker = (kind != SynthKind::TextureNoise).then(|| {
            let period = rng.random_range(10.0..18.0);
            let theta = rng.random_range(0.0..PI / 2.0);
            let tint = [0, 1, 2].map(|_| rng.random_range(0.15..0.25));
            (period, theta, tint)
        });
        Pattern { waves, checker }
    }

    fn eval(&self, x: f64, y: f64) -> [f64; 3] {
        let mut v = [0.5; 3];
        for w in &self.waves {
            let s = (2.0 * PI * (w.fx * x + w.fy * y) + w.phase).sin();
            for c in 0..3 {
                v[c] += w.amp[c] * s;
            }
        }
        if let Some((period, theta, tint)) = self.checker {
            let (ct, st) = (theta.cos(), theta.sin());
            let (u, q) = (ct * x + st * y, -st * x + ct * y);
            let k = 2.0 * PI / period;
            // Sharp but continuous edges.
            let s = (4.0 * (k * u).sin() * (k * q).sin()).tanh();
            for c in 0..3 {
                v[c] += tint[c] * s;
            }
        }
        v.map(|c| c.clamp(0.0, 1.0))
    }
}

/// Deterministic synthetic clip of `frames` HR frames (`1 × 3 × H × W`).
pub fn synth_clip(kind: SynthKind, frames: usize, seed: u64) -> Result<Clip> {
    synth_clip_with(kind, frames, seed, SynthParams::default())
}

pub fn synth_clip_with(kind: SynthKind, frames: usize, seed: u64, params: SynthParams) -> Result<Clip> {
    if frames == 0 || params.height == 0 || params.width == 0 {
        return Err(VsrError::Usage(
            "synthetic clips need at least one non-empty frame".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pattern = Pattern::new(kind, &mut rng);
    let (vx, vy) = params.velocity.unwrap_or_else(|| {
        let speed = rng.random_range(1.0..3.0);
        let dir = rng.random_range(0.0..2.0 * PI);
        (speed * dir.cos(), speed * dir.sin())
    });
    let (spin, grow) = if kind == SynthKind::RotateZoom {
        (rng.random_range(-0.03..0.03), rng.random_range(-0.02..0.02))
    } else {
        (0.0, 0.0)
    };
    let (h, w) = (params.height, params.width);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = Vec::with_capacity(frames);
    let mut motion = Vec::with_capacity(frames);
    for t in 0..frames {
        let tf = t as f64;
        let m = match kind {
            SynthKind::RotateZoom => FrameMotion {
                dx: 0.0,
                dy: 0.0,
                angle: spin * tf,
                zoom: 1.0 + grow * tf,
            },
            _ => FrameMotion {
                dx: vx * tf,
                dy: vy * tf,
                angle: 0.0,
                zoom: 1.0,
            },
        };
        let (ca, sa) = (m.angle.cos(), m.angle.sin());
        let mut data = vec![0.0f32; 3 * h * w];
        for y in 0..h {
            for x in 0..w {
                let (px, py) = (x as f64 - cx - m.dx, y as f64 - cy - m.dy);
                let sx = (ca * px + sa * py) / m.zoom + cx;
                let sy = (-sa * px + ca * py) / m.zoom + cy;
                let v = pattern.eval(sx, sy);
                for c in 0..3 {
                    data[(c * h + y) * w + x] = v[c] as f32;
                }
            }
        }
        out.push(Tensor::from_vec(&[1, 3, h, w], data)?);
        motion.push(m);
    }
    let mut clip = Clip::new(format!("{}_{seed}", kind.as_str()), out)?;
    clip.motion = Some(motion);
    clip.seed = Some(seed);
    Ok(clip)
}

/// Random seed stream for picking clips, kept separate from pattern seeds.
pub fn clip_seeds<R: Rng + ?Sized>(rng: &mut R, count: usize) -> Vec<u64> {
    (0..count).map(|_| rng.random()).collect()
}
