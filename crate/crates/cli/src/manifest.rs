use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use cqrnn::datagen::SyntheticSpec;
use cqrnn::losses::Side;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Provenance written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Arguments after the program name.
    pub command: Vec<String>,
    pub config_hash: String,
    pub master_seed: u64,
    /// Stage path -> derived seed.
    pub seed_paths: BTreeMap<String, u64>,
    pub side: Option<Side>,
    pub synthetic: Option<SyntheticSpec>,
    pub stats: serde_json::Value,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(master_seed: u64, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            command: std::env::args().skip(1).collect(),
            config_hash: config_hash(config)?,
            master_seed,
            seed_paths: BTreeMap::new(),
            side: None,
            synthetic: None,
            stats: serde_json::Value::Null,
            outputs: Vec::new(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        cqrnn::io::write_atomic(path, text.as_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = cqrnn::io::read_to_string(path)?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}

/// SHA-256 of the configuration's JSON form, hex encoded.
pub fn config_hash(config: &impl Serialize) -> Result<String> {
    let json = serde_json::to_vec(config)?;
    let digest = Sha256::digest(&json);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// `<dir>/<stem>.manifest.json` for a data file.
pub fn manifest_path(data: &Path) -> std::path::PathBuf {
    let stem = data
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    data.with_file_name(format!("{stem}.manifest.json"))
}
