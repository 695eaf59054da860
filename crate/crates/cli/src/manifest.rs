//! Append-only JSON-lines run manifests.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use vsrpp_core::{Result, VsrError};

/// Git-style object hash: SHA-256 over `blob <len>\0` followed by the content.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn unix_time() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: Option<String>,
    pub seed: Option<u64>,
    pub weights_hash: Option<String>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub status: String,
    pub metrics: Map<String, Value>,
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            config: None,
            seed: None,
            weights_hash: None,
            started_unix: unix_time(),
            finished_unix: 0.0,
            status: "running".into(),
            metrics: Map::new(),
        }
    }

    pub fn metric(&mut self, key: &str, value: impl Into<Value>) {
        self.metrics.insert(key.to_string(), value.into());
    }

    /// Appends this manifest as one JSON line.
    pub fn append(mut self, path: &Path, status: &str) -> Result<()> {
        self.finished_unix = unix_time();
        self.status = status.to_string();
        let line = serde_json::to_string(&self).map_err(|e| VsrError::Format(e.to_string()))?;
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| VsrError::io(path, e))?;
        writeln!(f, "{line}").map_err(|e| VsrError::io(path, e))
    }
}
