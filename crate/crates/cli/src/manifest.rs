//! Per-run manifest: what ran, on which inputs, with which seeds, and when.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_sha256: String,
    pub seeds: BTreeMap<String, u64>,
    pub workers: usize,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_at: String,
    pub finished_at: String,
    pub wall_time_s: f64,
    /// Named sub-step timings in seconds.
    pub timings: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<FileDigest> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

/// Collects outputs as they are written and assembles the manifest at the end.
pub struct RunRecorder {
    out_dir: PathBuf,
    started: Instant,
    manifest: RunManifest,
}

impl RunRecorder {
    pub fn new(out_dir: &Path, command: &str, config_toml: &str, workers: usize) -> Self {
        Self {
            out_dir: out_dir.to_path_buf(),
            started: Instant::now(),
            manifest: RunManifest {
                tool: env!("CARGO_PKG_NAME"),
                version: env!("CARGO_PKG_VERSION"),
                command: command.to_string(),
                config_sha256: sha256_hex(config_toml.as_bytes()),
                seeds: BTreeMap::new(),
                workers,
                inputs: Vec::new(),
                outputs: Vec::new(),
                started_at: now(),
                finished_at: String::new(),
                wall_time_s: 0.0,
                timings: BTreeMap::new(),
                notes: Vec::new(),
            },
        }
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    pub fn seed(&mut self, name: &str, seed: u64) {
        self.manifest.seeds.insert(name.to_string(), seed);
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.manifest.inputs.push(file_digest(path)?);
        Ok(())
    }

    pub fn timing(&mut self, name: &str, secs: f64) {
        self.manifest.timings.insert(name.to_string(), secs);
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.manifest.notes.push(note.into());
    }

    /// Writes `bytes` to `rel` under the output directory and records its digest.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.out_dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.manifest.outputs.push(FileDigest {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(path)
    }

    pub fn finish(mut self) -> Result<RunManifest> {
        self.manifest.finished_at = now();
        self.manifest.wall_time_s = self.started.elapsed().as_secs_f64();
        self.manifest.outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let json = serde_json::to_string_pretty(&self.manifest)?;
        let path = self.out_dir.join(MANIFEST_FILE);
        std::fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
        Ok(self.manifest)
    }
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}
