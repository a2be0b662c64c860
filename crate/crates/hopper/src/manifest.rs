use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Result;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub name: String,
    pub status: String,
}

/// Written by every command next to its outputs.
#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct Manifest {
    pub command: String,
    /// `planned`, `ok` or `failed`.
    pub status: String,
    pub error: Option<String>,
    pub seed: u64,
    pub paper_scale: bool,
    pub config: serde_json::Value,
    pub stages: Vec<StageRecord>,
    /// Relative path to SHA-256 of the file contents.
    pub artifacts: BTreeMap<String, String>,
    pub counts: BTreeMap<String, u64>,
}

impl Manifest {
    pub fn new(command: &str, config: &crate::Config, paper_scale: bool, stages: &[&str]) -> Self {
        Manifest {
            command: command.into(),
            status: "planned".into(),
            error: None,
            seed: config.seed,
            paper_scale,
            config: serde_json::to_value(config).expect("config serializes"),
            stages: stages.iter().map(|s| StageRecord { name: s.to_string(), status: "planned".into() }).collect(),
            artifacts: BTreeMap::new(),
            counts: BTreeMap::new(),
        }
    }

    pub fn set_stage(&mut self, name: &str, status: &str) {
        if let Some(s) = self.stages.iter_mut().find(|s| s.name == name) {
            s.status = status.into();
        }
    }

    /// Records the hash of `dir/rel`.
    pub fn add_artifact(&mut self, dir: &Path, rel: &str) -> Result<()> {
        self.artifacts.insert(rel.into(), sha256_file(&dir.join(rel))?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::formats::write_json(path, self)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}
