//! Run manifests. Paths are relative to the manifest's directory so two
//! runs with the same inputs produce identical bytes wherever they live.

use std::path::{Path, PathBuf};

use eprb_core::counts::ModelId;
use serde::{Deserialize, Serialize};

use crate::files::sha256_file;
use crate::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub tag: String,
    pub index: u64,
    pub seed: u64,
}

/// One simulated experiment and its files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub id: String,
    /// Alice's bias angle, radians.
    pub theta: f64,
    pub duration_ns: f64,
    pub alice: String,
    pub bob: String,
    pub truth: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub model: ModelId,
    #[serde(rename = "X")]
    pub x: f64,
    #[serde(rename = "DF")]
    pub df: usize,
    #[serde(rename = "Z")]
    pub z: f64,
    pub accepted: bool,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub config_hash: String,
    pub root_seed: u64,
    pub seeds: Vec<SeedRecord>,
    pub inputs: Vec<FileRef>,
    pub outputs: Vec<FileRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub experiments: Vec<ExperimentRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fits: Vec<FitSummary>,
}

impl RunManifest {
    pub fn new(command: &str, config_hash: String, root_seed: u64) -> Self {
        let run_id = crate::files::sha256_hex(format!("{command}:{config_hash}:{root_seed}").as_bytes())[..16].to_string();
        Self {
            run_id,
            command: command.to_string(),
            config_hash,
            root_seed,
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            experiments: Vec::new(),
            fits: Vec::new(),
        }
    }

    /// Hash files that exist now; `base` is the manifest's directory.
    pub fn file_ref(base: &Path, path: &Path) -> Result<FileRef> {
        let rel = relative(base, path);
        Ok(FileRef { path: rel.to_string_lossy().replace('\\', "/"), sha256: sha256_file(path)? })
    }

    /// Every referenced file exists and matches its hash.
    pub fn verify(&self, base: &Path) -> Result<()> {
        for f in self.inputs.iter().chain(&self.outputs) {
            let path = base.join(&f.path);
            if !path.exists() {
                return Err(CliError::Data(format!("manifest references missing file {}", path.display())));
            }
            let actual = sha256_file(&path)?;
            if actual != f.sha256 {
                return Err(CliError::Data(format!("hash mismatch for {}", path.display())));
            }
        }
        Ok(())
    }
}

/// `path` relative to `base` when it lies inside it, otherwise as given.
fn relative(base: &Path, path: &Path) -> PathBuf {
    let abs = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
    let (b, p) = (abs(base), abs(path));
    if let Ok(rel) = p.strip_prefix(&b) {
        return rel.to_path_buf();
    }
    // walk up from base until a common ancestor is found
    let mut up = PathBuf::new();
    for anc in b.ancestors() {
        if let Ok(rel) = p.strip_prefix(anc) {
            return up.join(rel);
        }
        up.push("..");
    }
    path.to_path_buf()
}
