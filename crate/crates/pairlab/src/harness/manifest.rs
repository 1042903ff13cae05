//! Output files, digests, and the per-run manifest.
//!
//! Every experiment writes its files atomically (temp file + rename) and then
//! records a manifest listing each output's SHA-256. Reruns with an identical
//! config reproduce identical bytes, so digest equality is the reproducibility
//! check.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::jsonfmt;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Write `bytes` to `path` via a sibling temp file and an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("invalid output path {}", path.display())))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct OutputDigest {
    pub path: String,
    pub sha256: String,
}

/// Record of one experiment run: config echo, seeds, version, output digests.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub version: String,
    pub seeds: Vec<u64>,
    pub config: serde_json::Value,
    pub outputs: Vec<OutputDigest>,
}

pub const MANIFEST_FILE: &str = "run_manifest.json";

/// Collects named outputs for one run and finalizes the manifest.
pub struct OutputWriter {
    dir: PathBuf,
    outputs: Vec<OutputDigest>,
}

impl OutputWriter {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            outputs: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Write one output file and record its digest.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes)?;
        self.outputs.push(OutputDigest {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(path)
    }

    /// Write the manifest (not listed among its own outputs) and return the
    /// recorded digests.
    pub fn finalize<C: Serialize>(
        mut self,
        experiment: &str,
        seeds: &[u64],
        config: &C,
    ) -> Result<(PathBuf, Vec<OutputDigest>)> {
        self.outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = RunManifest {
            experiment: experiment.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seeds: seeds.to_vec(),
            config: serde_json::to_value(config)?,
            outputs: self.outputs.clone(),
        };
        let path = self.dir.join(MANIFEST_FILE);
        write_atomic(&path, jsonfmt::to_json_string(&manifest)?.as_bytes())?;
        Ok((path, self.outputs))
    }
}

/// Re-hash every file listed in a manifest; returns the mismatched paths.
pub fn verify_manifest(dir: &Path) -> Result<(RunManifest, Vec<String>)> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest: RunManifest = serde_json::from_str(&text)?;
    let mut mismatched = Vec::new();
    for out in &manifest.outputs {
        let bytes = fs::read(dir.join(&out.path))?;
        if sha256_hex(&bytes) != out.sha256 {
            mismatched.push(out.path.clone());
        }
    }
    Ok((manifest, mismatched))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn digests_and_verification() {
        let dir = tempdir().unwrap();
        let mut w = OutputWriter::new(dir.path()).unwrap();
        w.write("a.csv", b"x,y\n1,2\n").unwrap();
        w.write("b.json", b"{}").unwrap();
        let (_, outputs) = w
            .finalize("demo", &[1, 2], &serde_json::json!({"k": 1}))
            .unwrap();
        assert_eq!(outputs.len(), 2);

        let (manifest, mismatched) = verify_manifest(dir.path()).unwrap();
        assert_eq!(manifest.experiment, "demo");
        assert!(mismatched.is_empty());

        std::fs::write(dir.path().join("a.csv"), b"tampered").unwrap();
        let (_, mismatched) = verify_manifest(dir.path()).unwrap();
        assert_eq!(mismatched, vec!["a.csv".to_string()]);
    }

    #[test]
    fn sha256_known_value() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
