//! Weight and config files.
//!
//! Weight file layout, all integers `u32` little-endian:
//! magic `VSRW`, format version, tensor count, then per tensor the name
//! length, UTF-8 name bytes, rank, extents and `f32` little-endian data.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, VsrError};
use crate::net::config::NetConfig;
use crate::tensor::Tensor;
use crate::weights::ModelWeights;

pub const WEIGHTS_MAGIC: [u8; 4] = *b"VSRW";
pub const WEIGHTS_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| VsrError::Format(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_weights(weights: &ModelWeights) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&WEIGHTS_MAGIC);
    put_u32(&mut out, WEIGHTS_VERSION as usize)?;
    put_u32(&mut out, weights.len())?;
    for (name, t) in weights.iter() {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.rank())?;
        for &d in t.shape() {
            put_u32(&mut out, d)?;
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                VsrError::Format(format!(
                    "weight file truncated while reading {what} at byte {}",
                    self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}

pub fn decode_weights(bytes: &[u8]) -> Result<ModelWeights> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != WEIGHTS_MAGIC {
        return Err(VsrError::Format("not a weight file (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != WEIGHTS_VERSION as usize {
        return Err(VsrError::Format(format!("unsupported weight file version {version}")));
    }
    let count = r.u32("tensor count")?;
    let mut w = ModelWeights::new();
    for k in 0..count {
        let len = r.u32("name length")?;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| VsrError::Format(format!("tensor {k}: name is not UTF-8")))?
            .to_string();
        let rank = r.u32("rank")?;
        let shape = (0..rank).map(|_| r.u32("extent")).collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| VsrError::Format(format!("{name}: shape {shape:?} overflows")))?;
        let raw = r.take(numel.saturating_mul(4), &name)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        w.insert(name, Tensor::from_vec(&shape, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(VsrError::Format(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }
    Ok(w)
}

pub fn save_weights(weights: &ModelWeights, path: &Path) -> Result<()> {
    let bytes = encode_weights(weights)?;
    let mut f = fs::File::create(path).map_err(|e| VsrError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| VsrError::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<ModelWeights> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| VsrError::io(path, e))?;
    decode_weights(&bytes)
}

pub fn save_config(config: &NetConfig, path: &Path) -> Result<()> {
    fs::write(path, config.to_config_string()).map_err(|e| VsrError::io(path, e))
}

pub fn load_config(path: &Path) -> Result<NetConfig> {
    let text = fs::read_to_string(path).map_err(|e| VsrError::io(path, e))?;
    NetConfig::parse(&text)
}
