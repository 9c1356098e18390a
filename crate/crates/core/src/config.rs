//! Run configuration: one file drives every stage of the pipeline.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::DetectionConfig;
use crate::sim::SimConfig;
use crate::streaming::ReportPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub grad_clip: Option<f64>,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub logit_clamp: f64,
    pub init_scale: f64,
    /// Report-time mini-batch bucket width; 0 steps per sample.
    pub batch_bucket: f64,
    /// Snapshot grid for the predicted-CTR series.
    pub snapshot_every: f64,
    /// Probe users evaluated per snapshot.
    pub probe_users: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            learning_rate: 0.05,
            grad_clip: Some(10.0),
            embed_dim: 16,
            hidden_dim: 32,
            logit_clamp: 15.0,
            init_scale: 0.1,
            batch_bucket: 0.0,
            snapshot_every: 30.0,
            probe_users: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeqConfig {
    /// Attach the five retrieved sequences as model features.
    pub enabled: bool,
    /// Retrieval length L per sequence.
    pub length: usize,
    pub att_dim: usize,
    pub temperature: f64,
    pub contrastive_weight: f64,
}

impl Default for SeqConfig {
    fn default() -> Self {
        SeqConfig {
            enabled: false,
            length: 50,
            att_dim: 16,
            temperature: 0.1,
            contrastive_weight: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub policy: ReportPolicy,
    pub trainer: TrainerConfig,
    pub seq: SeqConfig,
    pub detection: DetectionConfig,
    /// Seed offset for the held-out evaluation log.
    pub eval_seed_offset: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sim: SimConfig::default(),
            policy: ReportPolicy::default(),
            trainer: TrainerConfig::default(),
            seq: SeqConfig::default(),
            detection: DetectionConfig::default(),
            eval_seed_offset: 7_001,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.policy.validate()?;
        if !(self.trainer.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.trainer.embed_dim == 0 || self.trainer.hidden_dim == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Load from a JSON or TOML file, chosen by extension.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let config: RunConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
            _ => serde_json::from_str(&text)?,
        };
        config.validate()?;
        Ok(config)
    }

    /// Canonical JSON used for hashing and manifests.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex sha256 of the canonical form; names the run directory.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_hash_stably() {
        let config = RunConfig::default();
        config.validate().unwrap();
        assert_eq!(config.digest(), config.digest());
        let mut other = config.clone();
        other.sim.seed += 1;
        assert_ne!(config.digest(), other.digest());
    }

    #[test]
    fn loads_json_and_toml() {
        let dir = tempfile::tempdir().unwrap();
        let json_path = dir.path().join("run.json");
        std::fs::write(&json_path, r#"{"sim": {"num_users": 5}}"#).unwrap();
        let config = RunConfig::load(&json_path).unwrap();
        assert_eq!(config.sim.num_users, 5);
        assert_eq!(config.sim.num_rooms, SimConfig::default().num_rooms);

        let toml_path = dir.path().join("run.toml");
        std::fs::write(&toml_path, "[sim]\nnum_users = 9\n").unwrap();
        let config = RunConfig::load(&toml_path).unwrap();
        assert_eq!(config.sim.num_users, 9);
    }
}
