use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::sha256_hex;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    #[serde(default)]
    pub cache_hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub seconds: f64,
    pub artifacts: Vec<ArtifactRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config_hash: String,
    pub stages: Vec<StageRecord>,
}

pub fn tool_version() -> String {
    option_env!("UBALAB_GIT_DESCRIBE")
        .map(str::to_string)
        .unwrap_or_else(|| format!("v{}", env!("CARGO_PKG_VERSION")))
}

impl RunManifest {
    pub fn new(config_hash: String) -> Self {
        RunManifest {
            version: tool_version(),
            config_hash,
            stages: Vec::new(),
        }
    }

    pub fn load(out: &Path) -> Result<Option<Self>> {
        let path = out.join(MANIFEST_FILE);
        match std::fs::read_to_string(&path) {
            Ok(text) => Ok(Some(serde_json::from_str(&text)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn save(&self, out: &Path) -> Result<()> {
        let path = out.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text).map_err(|e| Error::io(path, e))
    }

    /// Replaces the record of the same stage, or appends.
    pub fn record(&mut self, stage: StageRecord) {
        match self.stages.iter_mut().find(|s| s.name == stage.name) {
            Some(slot) => *slot = stage,
            None => self.stages.push(stage),
        }
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// `(path, sha256)` of every artifact, sorted by path.
    pub fn artifact_hashes(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = self
            .stages
            .iter()
            .flat_map(|s| s.artifacts.iter().map(|a| (a.path.clone(), a.sha256.clone())))
            .collect();
        out.sort();
        out
    }

    pub fn cache_hits(&self) -> usize {
        self.stages
            .iter()
            .flat_map(|s| &s.artifacts)
            .filter(|a| a.cache_hit)
            .count()
    }

    /// Every listed artifact exists under `out` with the recorded hash.
    pub fn verify(&self, out: &Path) -> Result<()> {
        for a in self.stages.iter().flat_map(|s| &s.artifacts) {
            let path = out.join(&a.path);
            let bytes = std::fs::read(&path).map_err(|_| Error::MissingArtifact(path.clone()))?;
            if sha256_hex(&bytes) != a.sha256 {
                return Err(Error::Format(format!("{} does not match its manifest hash", a.path)));
            }
        }
        Ok(())
    }
}
