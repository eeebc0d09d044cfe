//! Run manifests: configuration echo, versions, input and output hashes.
//!
//! Every command writes `<primary output>.manifest.json`. Outputs are
//! deterministic, so re-running a manifest's command reproduces every
//! output hash.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex_string(&hasher.finalize()))
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_files(paths: &[PathBuf]) -> anyhow::Result<Vec<FileHash>> {
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        out.push(FileHash { path: p.display().to_string(), sha256: sha256_file(p)? });
    }
    Ok(out)
}

/// Write the manifest next to the primary output.
pub fn write_manifest(
    primary_output: &Path,
    command: &str,
    config: serde_json::Value,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
) -> anyhow::Result<PathBuf> {
    let manifest = Manifest {
        tool: "lobmm".to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        config,
        inputs: hash_files(inputs)?,
        outputs: hash_files(outputs)?,
    };
    let mut name = primary_output.as_os_str().to_os_string();
    name.push(".manifest.json");
    let path = PathBuf::from(name);
    let f = std::fs::File::create(&path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), &manifest)?;
    Ok(path)
}
