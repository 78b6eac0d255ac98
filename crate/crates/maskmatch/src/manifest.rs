//! Append-only run manifests: one JSON line per run with the command, the
//! fully resolved configuration, seeds, inputs, and content hashes of the
//! outputs.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub stage: Option<String>,
    pub config: BTreeMap<String, toml::Value>,
    pub seeds: BTreeMap<String, u64>,
    /// Input artifacts: name -> "path:sha256".
    pub inputs: BTreeMap<String, String>,
    /// Output artifacts: file name -> sha256.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, config: &crate::config::Config) -> Self {
        let mut seeds = BTreeMap::new();
        seeds.insert("seed".to_string(), config.seed);
        RunManifest {
            command: command.to_string(),
            stage: None,
            config: config.to_map(),
            seeds,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn record_output(&mut self, dir: &Path, file_name: &str) -> Result<()> {
        let hash = crate::checkpoint::file_hash(&dir.join(file_name))?;
        self.outputs.insert(file_name.to_string(), hash);
        Ok(())
    }
}

/// Appends one manifest line to `<dir>/manifest.jsonl`.
pub fn append(dir: &Path, manifest: &RunManifest) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let line = serde_json::to_string(manifest).expect("manifest serializes");
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(dir.join(MANIFEST_FILE))?;
    writeln!(f, "{line}")?;
    Ok(())
}
