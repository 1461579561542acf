use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::digest::json_digest;
use crate::{Error, Result};

use super::model::GroundingModel;
use super::train::{LossReport, TrainConfig};

pub const CHECKPOINT_VERSION: &str = "groundvla-ckpt/1";

/// Self-describing JSON checkpoint. Floats are written in shortest
/// round-trip form, so save → load is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: String,
    pub config: TrainConfig,
    pub config_hash: String,
    pub dataset_digest: String,
    pub final_losses: LossReport,
    pub model: GroundingModel,
}

impl Checkpoint {
    pub fn new(config: TrainConfig, dataset_digest: String, model: GroundingModel, final_losses: LossReport) -> Result<Self> {
        Ok(Self {
            version: CHECKPOINT_VERSION.to_string(),
            config_hash: json_digest(&config)?,
            config,
            dataset_digest,
            final_losses,
            model,
        })
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            line: e.line(),
            reason: e.to_string(),
        })?;
        let version = value.get("version").and_then(|v| v.as_str()).unwrap_or("");
        if version != CHECKPOINT_VERSION {
            return Err(Error::SchemaVersion {
                path: path.to_path_buf(),
                expected: CHECKPOINT_VERSION.into(),
                found: version.into(),
            });
        }
        let ckpt: Checkpoint = serde_json::from_value(value).map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            line: 0,
            reason: e.to_string(),
        })?;
        ckpt.verify()?;
        Ok(ckpt)
    }

    /// Config hash matches the stored config and parameters are finite.
    pub fn verify(&self) -> Result<()> {
        let found = json_digest(&self.config)?;
        if found != self.config_hash {
            return Err(Error::Config(format!("config hash {} does not match stored config ({found})", self.config_hash)));
        }
        if !self.model.is_finite() {
            return Err(Error::NonFinite("checkpoint parameters"));
        }
        Ok(())
    }

    /// Fails unless the checkpoint was trained on the dataset with `digest`.
    pub fn check_dataset(&self, digest: &str) -> Result<()> {
        if self.dataset_digest != digest {
            return Err(Error::DigestMismatch {
                expected: self.dataset_digest.clone(),
                found: digest.to_string(),
            });
        }
        Ok(())
    }
}
