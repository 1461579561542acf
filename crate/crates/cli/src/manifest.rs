use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use groundvla::digest::{file_digest, sha256_parts};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
/// verify-theory may share a directory with eval, so it keeps its own manifest.
pub const THEORY_MANIFEST_FILE: &str = "theory_manifest.json";
pub const MANIFEST_VERSION: &str = "groundvla-run/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactDigest {
    pub file: String,
    pub sha256: String,
}

/// Everything needed to reproduce a run, plus the digest of every file it wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    /// Derived from the command, config hash, seed and inputs; identical inputs give the same id.
    pub run_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<ArtifactDigest>,
    pub outputs: Vec<ArtifactDigest>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, config_hash: String, seed: u64, inputs: Vec<ArtifactDigest>, started_unix: u64) -> Self {
        let seed_text = seed.to_string();
        let mut parts: Vec<&[u8]> = vec![command.as_bytes(), config_hash.as_bytes(), seed_text.as_bytes()];
        for input in &inputs {
            parts.push(input.sha256.as_bytes());
        }
        let run_id = format!("{command}-{}", &sha256_parts(parts)[..12]);
        Self {
            version: MANIFEST_VERSION.into(),
            command: command.into(),
            run_id,
            config_hash,
            seed,
            inputs,
            outputs: Vec::new(),
            started_unix,
            finished_unix: started_unix,
        }
    }

    /// Digests the listed files in `dir` and writes the manifest next to them.
    pub fn finish(mut self, dir: &Path, files: &[&str]) -> Result<Self, CliError> {
        for file in files {
            self.outputs.push(ArtifactDigest {
                file: (*file).to_string(),
                sha256: file_digest(&dir.join(file))?,
            });
        }
        self.finished_unix = now_unix();
        let name = if self.command == "verify-theory" { THEORY_MANIFEST_FILE } else { MANIFEST_FILE };
        let path = dir.join(name);
        let bytes = serde_json::to_vec_pretty(&self).map_err(groundvla::Error::from)?;
        std::fs::write(&path, bytes).map_err(|e| groundvla::Error::io(&path, e))?;
        Ok(self)
    }
}

pub fn input(label: &str, sha256: String) -> ArtifactDigest {
    ArtifactDigest {
        file: label.to_string(),
        sha256,
    }
}
