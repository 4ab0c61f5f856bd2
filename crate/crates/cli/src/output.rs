//! Run manifests, hashing and file emission.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to rerun a command. Wall-clock time is reported on
/// stderr only, so the manifest itself is reproducible byte for byte.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub toolkit_version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_transform: Option<serde_json::Value>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects outputs under one directory and writes the manifest last.
pub struct Writer {
    dir: PathBuf,
    manifest: RunManifest,
}

impl Writer {
    pub fn new(dir: &Path, command: &str, seed: Option<u64>, config: serde_json::Value) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                command: command.to_string(),
                toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
                seed,
                config,
                inputs: Vec::new(),
                outputs: Vec::new(),
                model_transform: None,
            },
        })
    }

    pub fn record_input(&mut self, path: &Path, bytes: &[u8]) {
        self.manifest.inputs.push(InputRecord {
            path: path.display().to_string(),
            sha256: sha256_hex(bytes),
        });
    }

    pub fn set_transform(&mut self, transform: serde_json::Value) {
        self.manifest.model_transform = Some(transform);
    }

    pub fn text(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.manifest.outputs.push(name.to_string());
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.text(name, &s)
    }

    pub fn finish(mut self) -> Result<()> {
        self.manifest.outputs.push("manifest.json".into());
        let mut s = serde_json::to_string_pretty(&self.manifest)?;
        s.push('\n');
        let path = self.dir.join("manifest.json");
        fs::write(&path, s).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

/// Six significant digits for terminal output.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-4..15).contains(&exp) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - exp).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn sig6_list(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| sig6(*x)).collect();
    format!("[{}]", parts.join(", "))
}
