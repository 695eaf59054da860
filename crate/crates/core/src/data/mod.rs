//! Clips, degradations, synthetic data and metrics.

pub mod degrade;
pub mod metrics;
pub mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use image::{ColorType, ImageBuffer, Rgb};

use crate::error::{Result, VsrError};
use crate::tensor::Tensor;

pub use degrade::{
    bicubic_upsample, degrade_bd, degrade_bi, gaussian_kernel, imresize_bicubic, DegradationMode, DegradationSpec,
};
pub use metrics::{psnr, ssim, temporal_profile, Convention, MetricRow};
pub use synth::{synth_clip, synth_clip_with, FrameMotion, SynthKind, SynthParams};

/// An ordered sequence of `1 × 3 × H × W` frames with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub id: String,
    pub frames: Vec<Tensor>,
    pub source: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Ground-truth motion per frame, for synthetic clips.
    pub motion: Option<Vec<FrameMotion>>,
}

impl Clip {
    pub fn new(id: impl Into<String>, frames: Vec<Tensor>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| VsrError::Usage("a clip needs at least one frame".into()))?;
        let (n, c, _, _) = first.dims4()?;
        if n != 1 || c != 3 {
            return Err(VsrError::dim(format!(
                "clip frames must be 1×3×H×W, got {:?}",
                first.shape()
            )));
        }
        for (i, f) in frames.iter().enumerate() {
            if f.shape() != first.shape() {
                return Err(VsrError::dim(format!(
                    "frame {i} has shape {:?}, frame 0 has {:?}",
                    f.shape(),
                    first.shape()
                )));
            }
        }
        Ok(Clip {
            id: id.into(),
            frames,
            source: None,
            seed: None,
            motion: None,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames[0].shape()[2]
    }

    pub fn width(&self) -> usize {
        self.frames[0].shape()[3]
    }

    /// Applies `f` to every frame, keeping the id and provenance.
    pub fn map_frames(&self, f: impl Fn(&Tensor) -> Result<Tensor>) -> Result<Clip> {
        let frames = self.frames.iter().map(f).collect::<Result<Vec<_>>>()?;
        let mut out = Clip::new(self.id.clone(), frames)?;
        out.source = self.source.clone();
        out.seed = self.seed;
        out.motion = self.motion.clone();
        Ok(out)
    }
}

pub fn frame_file_name(i: usize) -> String {
    format!("{i:08}.png")
}

/// Reads an 8-bit PNG into a `1 × 3 × H × W` tensor. Gray images are
/// replicated to three channels and alpha is dropped.
pub fn load_png(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| VsrError::Image {
        path: path.into(),
        message: e.to_string(),
    })?;
    match img.color() {
        ColorType::L8 | ColorType::La8 | ColorType::Rgb8 | ColorType::Rgba8 => {}
        other => {
            return Err(VsrError::Image {
                path: path.into(),
                message: format!("only 8-bit PNG frames are supported, found {other:?}"),
            })
        }
    }
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, px) in rgb.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = px[c] as f32 / 255.0;
        }
    }
    Tensor::from_vec(&[1, 3, h, w], data)
}

/// Writes channel planes of `frame` (first batch item) as 8-bit RGB,
/// clamping to `[0, 1]`.
pub fn save_png(frame: &Tensor, path: &Path) -> Result<()> {
    let (_, c, h, w) = frame.dims4()?;
    if c != 3 && c != 1 {
        return Err(VsrError::dim(format!("cannot save {c}-channel image")));
    }
    let quant = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let img = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        let px = |ch: usize| quant(frame.at4(0, if c == 1 { 0 } else { ch }, y, x));
        Rgb([px(0), px(1), px(2)])
    });
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| VsrError::Image {
            path: path.into(),
            message: e.to_string(),
        })
}

/// Loads `00000000.png, 00000001.png, …` from `dir`.
pub fn load_clip_dir(dir: &Path) -> Result<Clip> {
    let entries = fs::read_dir(dir).map_err(|e| VsrError::io(dir, e))?;
    let mut indices = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| VsrError::io(dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(stem) = name.strip_suffix(".png") {
            if stem.len() == 8 && stem.bytes().all(|b| b.is_ascii_digit()) {
                indices.push(stem.parse::<usize>().expect("digits"));
            }
        }
    }
    if indices.is_empty() {
        return Err(VsrError::Usage(format!("no numbered PNG frames in {}", dir.display())));
    }
    indices.sort_unstable();
    for (expect, &got) in indices.iter().enumerate() {
        if got != expect {
            return Err(VsrError::Format(format!(
                "frame {} missing from {}",
                frame_file_name(expect),
                dir.display()
            )));
        }
    }
    let frames = indices
        .iter()
        .map(|&i| load_png(&dir.join(frame_file_name(i))))
        .collect::<Result<Vec<_>>>()?;
    let id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "clip".into());
    let mut clip = Clip::new(id, frames).map_err(|e| match e {
        VsrError::Dimension(m) => VsrError::Format(format!("{}: {m}", dir.display())),
        other => other,
    })?;
    clip.source = Some(dir.to_path_buf());
    Ok(clip)
}

pub fn save_clip_dir(clip: &Clip, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| VsrError::io(dir, e))?;
    for (i, f) in clip.frames.iter().enumerate() {
        save_png(f, &dir.join(frame_file_name(i)))?;
    }
    Ok(())
}
