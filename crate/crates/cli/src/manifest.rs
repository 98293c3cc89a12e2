//! Run manifests: every command records what it read, which seeds it used
//! and a digest of every file it wrote, so a rerun can be checked bit for bit.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, as given.
    pub args: Vec<String>,
    /// Resolved inputs, including the contents of any input files.
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub threads: usize,
    pub tool_version: String,
    pub started: String,
    pub finished: String,
    pub outputs: Vec<OutputFile>,
}

pub fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects outputs and the resolved config while a command runs.
#[derive(Debug)]
pub struct Recorder {
    pub out_dir: PathBuf,
    pub config: serde_json::Map<String, serde_json::Value>,
    pub seeds: Vec<u64>,
    outputs: Vec<OutputFile>,
}

impl Recorder {
    pub fn new(out_dir: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        Ok(Self { out_dir, config: serde_json::Map::new(), seeds: Vec::new(), outputs: Vec::new() })
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) {
        self.config.insert(key.to_string(), serde_json::to_value(value).expect("serializable config value"));
    }

    /// Writes `name` under the output directory and records its digest.
    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.out_dir.join(name);
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.retain(|o| o.path != name);
        self.outputs.push(OutputFile { path: name.to_string(), sha256: digest(contents.as_bytes()) });
        Ok(path)
    }

    pub fn finish(self, command: &str, args: Vec<String>, threads: usize, started: String) -> Result<RunManifest> {
        let manifest = RunManifest {
            command: command.to_string(),
            args,
            config: serde_json::Value::Object(self.config),
            seeds: self.seeds,
            threads,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started,
            finished: now(),
            outputs: self.outputs,
        };
        let path = self.out_dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).with_context(|| format!("writing {}", path.display()))?;
        Ok(manifest)
    }
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}

pub fn load(path: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

/// Outputs of `old` whose digest differs in `new`, or that `new` lacks.
pub fn mismatches(old: &RunManifest, new: &RunManifest) -> Vec<String> {
    old.outputs
        .iter()
        .filter(|o| !new.outputs.iter().any(|n| n.path == o.path && n.sha256 == o.sha256))
        .map(|o| o.path.clone())
        .collect()
}
