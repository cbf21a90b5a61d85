use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

impl Artifact {
    pub fn hash(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Self {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

/// Record of one command invocation. Paths are stored exactly as given on
/// the command line so that reruns in the same directory are identical.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: &'static str,
    pub version: &'static str,
    pub seed: u64,
    pub config: Map<String, Value>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    /// Only present with `--record-time`, which gives up byte-identical
    /// manifests across reruns.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_secs: Option<f64>,
}

pub struct ManifestBuilder {
    manifest: RunManifest,
    started: Instant,
    record_time: bool,
}

impl ManifestBuilder {
    pub fn new(command: &'static str, seed: u64, record_time: bool) -> Self {
        Self {
            manifest: RunManifest {
                command,
                version: env!("CARGO_PKG_VERSION"),
                seed,
                config: Map::new(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                wall_time_secs: None,
            },
            started: Instant::now(),
            record_time,
        }
    }

    pub fn config(&mut self, key: &str, value: impl Into<Value>) -> &mut Self {
        self.manifest.config.insert(key.to_owned(), value.into());
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        self.manifest.inputs.push(Artifact::hash(path)?);
        Ok(self)
    }

    pub fn output(&mut self, path: &Path) -> Result<&mut Self> {
        self.manifest.outputs.push(Artifact::hash(path)?);
        Ok(self)
    }

    /// Writes `<primary>.manifest.json` and returns its path.
    pub fn write(mut self, primary: &Path) -> Result<PathBuf> {
        if self.record_time {
            self.manifest.wall_time_secs = Some(self.started.elapsed().as_secs_f64());
        }
        let path = manifest_path(primary);
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

pub fn manifest_path(primary: &Path) -> PathBuf {
    let mut name = primary.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}
