//! Run manifests and all-or-nothing output staging.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub tool_version: String,
    pub command: String,
    /// Resolved training configuration (fit and compose only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<BTreeMap<String, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Command options that are not part of the training configuration.
    #[serde(default)]
    pub options: BTreeMap<String, String>,
    /// Input files by role, with absolute paths.
    pub inputs: BTreeMap<String, FileRecord>,
    /// Outputs relative to the manifest's directory.
    pub outputs: Vec<FileRecord>,
    pub wall_clock_seconds: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

pub fn input_record(path: &Path) -> Result<FileRecord, Failure> {
    let bytes = read_file(path)?;
    let abs =
        fs::canonicalize(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    Ok(FileRecord {
        path: abs.to_string_lossy().into_owned(),
        sha256: sha256_hex(&bytes),
    })
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let bytes = read_file(path)?;
        serde_json::from_slice(&bytes)
            .map_err(|e| Failure::usage(format!("{}: not a run manifest: {e}", path.display())))
    }

    pub fn input(&self, role: &str) -> Result<&FileRecord, Failure> {
        self.inputs
            .get(role)
            .ok_or_else(|| Failure::usage(format!("manifest has no '{role}' input")))
    }

    /// Fails unless every input still hashes to the recorded digest.
    pub fn verify_inputs(&self) -> Result<(), Failure> {
        for (role, rec) in &self.inputs {
            let now = sha256_hex(&read_file(Path::new(&rec.path))?);
            if now != rec.sha256 {
                return Err(Failure::io(format!(
                    "{role} input {} changed since the recorded run",
                    rec.path
                )));
            }
        }
        Ok(())
    }
}

/// Files are written into a hidden temporary directory next to their
/// destination and only moved into place by [`Staging::commit`]; dropping
/// an uncommitted staging area deletes it.
pub struct Staging {
    dir: tempfile::TempDir,
    dest: PathBuf,
    files: Vec<FileRecord>,
}

impl Staging {
    pub fn new(dest: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(dest).map_err(|e| Failure::io(format!("{}: {e}", dest.display())))?;
        let dir = tempfile::Builder::new()
            .prefix(".eoren-staging-")
            .tempdir_in(dest)
            .map_err(|e| Failure::io(format!("{}: {e}", dest.display())))?;
        Ok(Staging {
            dir,
            dest: dest.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        let path = self.dir.path().join(name);
        fs::write(&path, bytes).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
        self.files.push(FileRecord {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    /// Writes `manifest` (with this staging's outputs) under
    /// `manifest_name` and moves everything into the destination.
    pub fn commit(
        mut self,
        manifest: &mut RunManifest,
        manifest_name: &str,
    ) -> Result<(), Failure> {
        manifest.outputs = self.files.clone();
        let json = serde_json::to_vec_pretty(manifest)
            .map_err(|e| Failure::io(format!("serializing manifest: {e}")))?;
        let path = self.dir.path().join(manifest_name);
        fs::write(&path, json).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
        let names: Vec<String> = self
            .files
            .drain(..)
            .map(|f| f.path)
            .chain(std::iter::once(manifest_name.to_string()))
            .collect();
        for name in names {
            let target = self.dest.join(&name);
            fs::rename(self.dir.path().join(&name), &target)
                .map_err(|e| Failure::io(format!("{}: {e}", target.display())))?;
        }
        Ok(())
    }
}
