use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Machine-readable record of one invocation.
#[derive(Debug, Serialize)]
pub struct Summary {
    pub command: String,
    pub version: String,
    pub config: Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub metrics: Value,
}

impl Summary {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: Value::Null,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            metrics: Value::Null,
        }
    }

    pub fn input(&mut self, path: &Path, sha256: String) {
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256,
        });
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Digest of a manifest plus every file its `column` refers to, in order.
pub fn manifest_sha256(manifest: &Path, column: &str) -> Result<String> {
    let base: PathBuf = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut h = Sha256::new();
    h.update(std::fs::read(manifest).with_context(|| format!("reading {}", manifest.display()))?);
    let mut r = csv::Reader::from_path(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let idx = r
        .headers()?
        .iter()
        .position(|c| c == column)
        .with_context(|| format!("{}: no {column} column", manifest.display()))?;
    for rec in r.records() {
        let p = base.join(&rec?[idx]);
        h.update(std::fs::read(&p).with_context(|| format!("reading {}", p.display()))?);
    }
    Ok(hex::encode(h.finalize()))
}
