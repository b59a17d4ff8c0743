//! Content hashes and per-run manifests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MANIFEST_FORMAT: &str = "tipgan-manifest/1";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("missing artifact {0}")]
    MissingArtifact(String),
    #[error("hash mismatch for {path}: recorded {recorded}, found {found}")]
    HashMismatch { path: String, recorded: String, found: String },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String, ManifestError> {
    match std::fs::read(path) {
        Ok(bytes) => Ok(sha256_hex(&bytes)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(ManifestError::MissingArtifact(path.display().to_string()))
        }
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Path relative to the run directory.
    pub path: String,
    pub sha256: String,
}

/// What one pipeline stage read and wrote. Paths are relative to the run
/// directory, so manifests of identical runs in different places match.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub subcommand: String,
    pub tool_version: String,
    pub config_path: Option<String>,
    pub config_sha256: Option<String>,
    pub seeds: Vec<u64>,
    pub params_sha256: String,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
}

impl RunManifest {
    pub fn new(subcommand: &str, params_sha256: &str) -> Self {
        Self {
            format: MANIFEST_FORMAT.to_string(),
            subcommand: subcommand.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_path: None,
            config_sha256: None,
            seeds: Vec::new(),
            params_sha256: params_sha256.to_string(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn record(dir: &Path, rel: &str) -> Result<FileRecord, ManifestError> {
        Ok(FileRecord { path: rel.to_string(), sha256: file_sha256(&dir.join(rel))? })
    }

    pub fn add_input(&mut self, dir: &Path, rel: &str) -> Result<(), ManifestError> {
        let r = Self::record(dir, rel)?;
        self.inputs.push(r);
        Ok(())
    }

    pub fn add_output(&mut self, dir: &Path, rel: &str) -> Result<(), ManifestError> {
        let r = Self::record(dir, rel)?;
        self.outputs.push(r);
        Ok(())
    }

    pub fn output(&self, rel: &str) -> Option<&FileRecord> {
        self.outputs.iter().find(|r| r.path == rel)
    }

    /// File name of a stage's manifest inside the run directory.
    pub fn file_name(subcommand: &str) -> String {
        format!("manifest-{subcommand}.json")
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf, ManifestError> {
        let path = dir.join(Self::file_name(&self.subcommand));
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n")?;
        Ok(path)
    }

    pub fn load(dir: &Path, subcommand: &str) -> Result<Self, ManifestError> {
        let path = dir.join(Self::file_name(subcommand));
        let text = std::fs::read_to_string(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => ManifestError::MissingArtifact(path.display().to_string()),
            _ => e.into(),
        })?;
        serde_json::from_str(&text)
            .map_err(|e| ManifestError::Format { path: path.display().to_string(), message: e.to_string() })
    }

    /// Re-hashes a recorded output and fails if it changed or vanished.
    pub fn verify_output(&self, dir: &Path, rel: &str) -> Result<FileRecord, ManifestError> {
        let recorded = self
            .output(rel)
            .ok_or_else(|| ManifestError::MissingArtifact(format!("{rel} (not in {} manifest)", self.subcommand)))?;
        let found = file_sha256(&dir.join(rel))?;
        if found != recorded.sha256 {
            return Err(ManifestError::HashMismatch { path: rel.to_string(), recorded: recorded.sha256.clone(), found });
        }
        Ok(recorded.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn verify_detects_changes_and_missing_files() {
        let dir = std::env::temp_dir().join(format!("manifest-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("a.txt"), "one").unwrap();
        let mut m = RunManifest::new("dataset", "x");
        m.add_output(&dir, "a.txt").unwrap();
        m.save(&dir).unwrap();
        let back = RunManifest::load(&dir, "dataset").unwrap();
        assert_eq!(back, m);
        assert!(back.verify_output(&dir, "a.txt").is_ok());
        std::fs::write(dir.join("a.txt"), "two").unwrap();
        assert!(matches!(back.verify_output(&dir, "a.txt"), Err(ManifestError::HashMismatch { .. })));
        std::fs::remove_file(dir.join("a.txt")).unwrap();
        assert!(matches!(back.verify_output(&dir, "a.txt"), Err(ManifestError::MissingArtifact(_))));
        assert!(matches!(RunManifest::load(&dir, "atlas"), Err(ManifestError::MissingArtifact(_))));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
