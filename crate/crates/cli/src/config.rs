//! Run configuration: one TOML file covering paths, architecture, training,
//! banding, and split ratios, plus the seed override chain.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use epcfusion_core::datahub::{BandTable, SplitRatios};
use epcfusion_core::fusionnet::ModelConfig;
use epcfusion_core::trainer::TrainConfig;
use epcfusion_core::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub properties: PathBuf,
    pub boundaries: PathBuf,
    pub text_embeddings: PathBuf,
    pub mask_embeddings: PathBuf,
    pub replacement_embeddings: PathBuf,
    /// Artifacts and manifests land here.
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            properties: "data/properties.csv".into(),
            boundaries: "data/boundaries.jsonl".into(),
            text_embeddings: "data/text_embeddings.jsonl".into(),
            mask_embeddings: "data/mask_embeddings.jsonl".into(),
            replacement_embeddings: "data/replacement_embeddings.jsonl".into(),
            output: "out".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitRatios,
    pub bands: BandTable,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            paths: Paths::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            split: SplitRatios::default(),
            bands: BandTable::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.split.validate()?;
        // Deserialization bypasses the ordering checks of the constructor.
        BandTable::new(*self.bands.mins())?;
        Ok(())
    }

    /// Hex digest of the resolved configuration, recorded in manifests.
    pub fn sha256(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(format!("{:x}", Sha256::digest(&bytes)))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.paths.output.join("model.ckpt")
    }

    pub fn split_path(&self) -> PathBuf {
        self.paths.output.join("split.json")
    }
}

/// Loads and validates the config, applying the seed and output overrides.
pub fn load(
    path: Option<&Path>,
    seed_flag: Option<u64>,
    output_flag: Option<&Path>,
) -> Result<RunConfig> {
    let mut cfg: RunConfig = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::InvalidConfig(format!("config {}: {e}", p.display())))?;
            toml::from_str(&text)
                .map_err(|e| Error::InvalidConfig(format!("config {}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    cfg.seed = resolve_seed(seed_flag, cfg.seed)?;
    if let Some(out) = output_flag {
        cfg.paths.output = out.to_path_buf();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Seed precedence: CLI flag, then EPCFUSION_SEED, then the config value.
fn resolve_seed(flag: Option<u64>, from_config: u64) -> Result<u64> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match std::env::var("EPCFUSION_SEED") {
        Ok(v) => v.trim().parse().map_err(|_| {
            Error::InvalidConfig(format!(
                "EPCFUSION_SEED {v:?} is not a 64-bit unsigned integer"
            ))
        }),
        Err(std::env::VarError::NotPresent) => Ok(from_config),
        Err(e) => Err(Error::InvalidConfig(format!("EPCFUSION_SEED: {e}"))),
    }
}

/// Config invariant: every path a command reads exists when it starts.
pub fn require_files(paths: &[&Path]) -> Result<()> {
    let missing: Vec<String> = paths
        .iter()
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "missing input files: {}",
            missing.join(", ")
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_partial_toml_fills_in() {
        RunConfig::default().validate().unwrap();
        let cfg: RunConfig = toml::from_str(
            "seed = 9\n[model]\nlatent_dim = 16\n[train]\nbatch_size = 32\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.model.latent_dim, 16);
        assert_eq!(cfg.model.cat_embed_dim, ModelConfig::default().cat_embed_dim);
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.train.max_epochs, TrainConfig::default().max_epochs);
    }

    #[test]
    fn bad_band_table_is_a_config_error() {
        let cfg: RunConfig =
            toml::from_str("[bands]\nmins = [92.0, 95.0, 69.0, 55.0, 39.0, 21.0, 1.0]\n").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.sha256().unwrap(), b.sha256().unwrap());
        b.seed = 7;
        assert_ne!(a.sha256().unwrap(), b.sha256().unwrap());
    }
}
