//! Reproducibility manifests.
//!
//! Every artifact gets a `<name>.manifest.json` sidecar recording the
//! tool version, the stage, the seed, content hashes of every input
//! file, and the resolved parameters. Manifests contain no timestamps,
//! so re-running a stage reproduces identical bytes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::trace::SCHEMA_VERSION;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool_name: String,
    pub tool_version: String,
    pub stage: String,
    pub seed: Option<u64>,
    pub inputs: Vec<InputHash>,
    /// Resolved stage parameters, sufficient to re-derive the artifact.
    pub params: serde_json::Value,
}

/// SHA-256 of a file's contents, lowercase hex.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex::encode(hasher.finalize()))
}

/// Sidecar path for an artifact.
pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut name = artifact
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push_str(".manifest.json");
    artifact.with_file_name(name)
}

/// Build and write the manifest next to `artifact`.
pub fn write_manifest<P: Serialize>(
    artifact: &Path,
    stage: &str,
    seed: Option<u64>,
    inputs: &[&Path],
    params: &P,
) -> Result<Manifest> {
    let mut hashes = Vec::with_capacity(inputs.len());
    for input in inputs {
        hashes.push(InputHash {
            path: input.to_string_lossy().into_owned(),
            sha256: sha256_file(input)?,
        });
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        tool_name: env!("CARGO_PKG_NAME").to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        stage: stage.to_string(),
        seed,
        inputs: hashes,
        params: serde_json::to_value(params)?,
    };
    std::fs::write(
        manifest_path(artifact),
        crate::trace::to_json_bytes(&manifest)?,
    )?;
    Ok(manifest)
}

pub fn load_manifest(artifact: &Path) -> Result<Manifest> {
    let path = manifest_path(artifact);
    let text = std::fs::read_to_string(&path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}
