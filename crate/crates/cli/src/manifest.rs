use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use mreit::MreitError;

#[derive(Debug, Clone, Serialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileRecord {
    pub fn of(path: &Path) -> Result<FileRecord, MreitError> {
        let bytes = std::fs::read(path).map_err(|source| MreitError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(FileRecord {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

/// JSON record of one CLI run: the command line, the effective configuration, and
/// content hashes of every input and output file.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: Vec<String>,
    pub subcommand: &'static str,
    pub config: serde_json::Value,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub wall_ms: f64,
    pub status: String,
}

impl RunManifest {
    pub fn new(subcommand: &'static str, config: serde_json::Value) -> RunManifest {
        RunManifest {
            tool: "mreit",
            version: env!("CARGO_PKG_VERSION"),
            command: std::env::args().collect(),
            subcommand,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_ms: 0.0,
            status: "ok".into(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), MreitError> {
        self.inputs.push(FileRecord::of(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<(), MreitError> {
        self.outputs.push(FileRecord::of(path)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), MreitError> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, json + "\n").map_err(|source| MreitError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}
