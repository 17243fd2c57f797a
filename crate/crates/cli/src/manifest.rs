//! Per-run provenance records: every command leaves a JSON manifest
//! naming its inputs (with digests), outputs, and resolved options.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use va_core::{Result, VaError};

use crate::artifacts::write_atomic;

#[derive(Debug, Serialize)]
struct InputDigest {
    source: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct RunManifest {
    tool: &'static str,
    version: &'static str,
    subcommand: &'static str,
    options: Value,
    inputs: Vec<InputDigest>,
    outputs: Vec<String>,
    seed: Option<u64>,
    started: String,
    finished: String,
}

/// Accumulates manifest content while a command runs.
pub struct ManifestBuilder {
    subcommand: &'static str,
    options: Map<String, Value>,
    inputs: Vec<InputDigest>,
    outputs: Vec<PathBuf>,
    seed: Option<u64>,
    started: String,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

impl ManifestBuilder {
    pub fn new(subcommand: &'static str) -> Self {
        ManifestBuilder {
            subcommand,
            options: Map::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed: None,
            started: now(),
        }
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn option(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("option serializes");
        self.options.insert(key.to_string(), v);
    }

    /// Records an input file and digests its bytes.
    pub fn input_file(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| {
            VaError::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {}", path.display(), e),
            ))
        })?;
        self.inputs.push(InputDigest {
            source: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    /// Records a non-file input (URL) with a digest of the fetched bytes.
    pub fn input_bytes(&mut self, source: &str, bytes: &[u8]) {
        self.inputs.push(InputDigest {
            source: source.to_string(),
            sha256: sha256_hex(bytes),
        });
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Writes the manifest next to the primary output (or into
    /// `manifest_dir`) and returns its path.
    pub fn finish(self, primary_output: &Path, manifest_dir: Option<&Path>) -> Result<PathBuf> {
        let path = manifest_path(self.subcommand, primary_output, manifest_dir)?;
        let manifest = RunManifest {
            tool: "va",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: self.subcommand,
            options: Value::Object(self.options),
            inputs: self.inputs,
            outputs: self
                .outputs
                .iter()
                .map(|p| p.display().to_string())
                .collect(),
            seed: self.seed,
            started: self.started,
            finished: now(),
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)
            .map_err(|e| VaError::Validation(format!("manifest serialization: {}", e)))?;
        bytes.push(b'\n');
        write_atomic(&path, &bytes)?;
        Ok(path)
    }
}

/// Directory outputs get `manifest.json` inside; file outputs get a
/// `<file>.manifest.json` sibling. `--manifest-dir` redirects the
/// directory, with the file name qualified by the subcommand so stages
/// sharing the dir cannot collide.
fn manifest_path(
    subcommand: &str,
    primary_output: &Path,
    manifest_dir: Option<&Path>,
) -> Result<PathBuf> {
    let is_dir = primary_output.extension().is_none() || primary_output.is_dir();
    match manifest_dir {
        Some(dir) => {
            let stem = primary_output
                .file_name()
                .map(|n| n.to_string_lossy().to_string())
                .unwrap_or_else(|| "out".to_string());
            Ok(dir.join(format!("{}_{}.manifest.json", subcommand, stem)))
        }
        None if is_dir => Ok(primary_output.join("manifest.json")),
        None => {
            let name = primary_output
                .file_name()
                .ok_or_else(|| {
                    VaError::Config(format!(
                        "output path {:?} has no file name",
                        primary_output.display()
                    ))
                })?
                .to_string_lossy();
            Ok(primary_output.with_file_name(format!("{}.manifest.json", name)))
        }
    }
}
