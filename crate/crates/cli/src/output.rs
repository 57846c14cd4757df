//! Atomic artifact writes and the run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

use crate::CliError;

#[derive(Debug, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Collects the files written by one command and emits `manifest.json`.
pub struct OutputDir {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    /// Writes `name` through a temporary file in the same directory and renames it into place.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let target = self.dir.join(name);
        write_atomic(&target, bytes)?;
        self.artifacts.push(Artifact {
            path: name.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len(),
        });
        Ok(target)
    }

    pub fn finish(mut self, command: &str, config: Value, seeds: Value, threads: Option<usize>) -> Result<PathBuf, CliError> {
        #[derive(Serialize)]
        struct Manifest<'a> {
            manifest_version: u32,
            tool: &'static str,
            version: &'static str,
            command: &'a str,
            argv: Vec<String>,
            threads: Option<usize>,
            seeds: Value,
            config: Value,
            artifacts: &'a [Artifact],
        }
        let artifacts = std::mem::take(&mut self.artifacts);
        let manifest = Manifest {
            manifest_version: 1,
            tool: "gmoe",
            version: env!("CARGO_PKG_VERSION"),
            command,
            argv: std::env::args().collect(),
            threads,
            seeds,
            config,
            artifacts: &artifacts,
        };
        let text = gmoe::json::to_string(&manifest)?;
        let target = self.dir.join("manifest.json");
        write_atomic(&target, text.as_bytes())?;
        Ok(target)
    }
}

pub fn write_atomic(target: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = target.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let fail = |e: std::io::Error| CliError::Runtime(format!("cannot write {}: {e}", target.display()));
    let mut tmp = NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(bytes).map_err(fail)?;
    tmp.as_file().sync_all().map_err(fail)?;
    tmp.persist(target).map_err(|e| fail(e.error))?;
    Ok(())
}
