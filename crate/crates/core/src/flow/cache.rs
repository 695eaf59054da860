//! On-disk flow cache.
//!
//! One file per `(clip, direction, i, p)`: eight little-endian `u32` header
//! words `(magic, version, 2, H, W, direction, i, p)` followed by `2·H·W`
//! little-endian `f32` values (x plane, then y plane).

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Result, VsrError};
use crate::flow::{Direction, FlowField};
use crate::tensor::Tensor;

/// `"VSRF"` read as a little-endian `u32`.
pub const FLOW_CACHE_MAGIC: u32 = u32::from_le_bytes(*b"VSRF");
pub const FLOW_CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct FlowCache {
    root: PathBuf,
}

impl FlowCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FlowCache { root: root.into() }
    }

    pub fn path(&self, clip: &str, direction: Direction, i: usize, p: usize) -> PathBuf {
        self.root
            .join(clip)
            .join(format!("{}_{i:06}_{p}.flow", direction.as_str()))
    }

    pub fn store(&self, clip: &str, direction: Direction, i: usize, p: usize, flow: &FlowField) -> Result<()> {
        let (n, _, h, w) = flow.tensor().dims4()?;
        if n != 1 {
            return Err(VsrError::Usage(format!(
                "flow cache stores single frames, got batch {n}"
            )));
        }
        let header = [
            FLOW_CACHE_MAGIC,
            FLOW_CACHE_VERSION,
            2,
            h as u32,
            w as u32,
            direction.code(),
            i as u32,
            p as u32,
        ];
        let mut bytes = Vec::with_capacity(32 + 8 * h * w);
        header.iter().for_each(|v| bytes.extend_from_slice(&v.to_le_bytes()));
        flow.tensor()
            .data()
            .iter()
            .for_each(|v| bytes.extend_from_slice(&v.to_le_bytes()));
        let path = self.path(clip, direction, i, p);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| VsrError::io(dir, e))?;
        }
        fs::write(&path, bytes).map_err(|e| VsrError::io(&path, e))
    }

    /// Cached flow, or `None` when no file exists.
    pub fn load(&self, clip: &str, direction: Direction, i: usize, p: usize) -> Result<Option<FlowField>> {
        let path = self.path(clip, direction, i, p);
        if !path.exists() {
            return Ok(None);
        }
        let bytes = fs::read(&path).map_err(|e| VsrError::io(&path, e))?;
        read_flow(&bytes, &path, direction, i, p).map(Some)
    }
}

fn read_flow(bytes: &[u8], path: &Path, direction: Direction, i: usize, p: usize) -> Result<FlowField> {
    let bad = |what: &str| VsrError::Format(format!("{}: {what}", path.display()));
    if bytes.len() < 32 {
        return Err(bad("truncated header"));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 * k..4 * k + 4].try_into().expect("4 bytes"));
    if word(0) != FLOW_CACHE_MAGIC {
        return Err(bad("bad magic"));
    }
    if word(1) != FLOW_CACHE_VERSION {
        return Err(bad(&format!("unsupported version {}", word(1))));
    }
    if word(2) != 2 {
        return Err(bad("flow must have 2 channels"));
    }
    if (word(5), word(6), word(7)) != (direction.code(), i as u32, p as u32) {
        return Err(bad("header does not match requested (direction, i, p)"));
    }
    let (h, w) = (word(3) as usize, word(4) as usize);
    let payload = &bytes[32..];
    if payload.len() != 8 * h * w {
        return Err(bad("payload length does not match header"));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    FlowField::new(Tensor::from_vec(&[1, 2, h, w], data)?)
}
