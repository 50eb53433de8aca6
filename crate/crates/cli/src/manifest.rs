//! `manifest.json`: what a command read, which settings and seeds it used,
//! and the SHA-256 of everything it wrote. Files are recorded by name only,
//! so two runs over identical inputs produce identical manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub parameters: Value,
    pub seeds: Value,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
}

/// Collects inputs and writes outputs into one run directory.
pub struct Run {
    dir: PathBuf,
    manifest: Manifest,
}

fn entry(name: &str, bytes: &[u8]) -> FileEntry {
    FileEntry { name: name.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() }
}

impl Run {
    pub fn new(dir: &Path, command: &str) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: Manifest {
                tool: "finsent",
                version: env!("CARGO_PKG_VERSION"),
                command: command.to_string(),
                parameters: Value::Null,
                seeds: Value::Object(Default::default()),
                inputs: Vec::new(),
                outputs: Vec::new(),
            },
        })
    }

    /// Reads an input file and records its hash.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        self.manifest.inputs.push(entry(&name, &bytes));
        Ok(bytes)
    }

    pub fn record_input(&mut self, name: &str, bytes: &[u8]) {
        self.manifest.inputs.push(entry(name, bytes));
    }

    pub fn set_parameters(&mut self, params: impl Serialize) -> Result<(), CliError> {
        self.manifest.parameters = serde_json::to_value(params)?;
        Ok(())
    }

    pub fn seed(&mut self, name: &str, seed: u64) {
        if let Value::Object(m) = &mut self.manifest.seeds {
            m.insert(name.to_string(), Value::from(seed));
        }
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes.as_ref()).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        self.manifest.outputs.push(entry(name, bytes.as_ref()));
        Ok(path)
    }

    pub fn finish(self) -> Result<Manifest, CliError> {
        let text = serde_json::to_string_pretty(&self.manifest)? + "\n";
        fs::write(self.dir.join("manifest.json"), text)?;
        Ok(self.manifest)
    }
}
