//! Run configuration: one TOML document with a section per subsystem.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::contrastive::ContrastConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::graph::WalkConfig;
use crate::skipgram::SkipGramConfig;
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    /// Drop non-canonical residues instead of rejecting the sequence.
    pub sanitize: bool,
    /// Seed of the toy residue embedder used when no REMB file is given.
    pub embedder_seed: u64,
    pub train: TrainConfig,
    pub encoder: EncoderConfig,
    pub contrast: ContrastConfig,
    pub walks: WalkConfig,
    pub skipgram: SkipGramConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 42,
            sanitize: false,
            embedder_seed: 7,
            train: TrainConfig::default(),
            encoder: EncoderConfig::default(),
            contrast: ContrastConfig::default(),
            walks: WalkConfig::default(),
            skipgram: SkipGramConfig::default(),
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.encoder.validate()?;
        self.contrast.validate()?;
        if !(self.walks.p > 0.0) || !(self.walks.q > 0.0) {
            return Err(Error::Config("walks.p and walks.q must be positive".into()));
        }
        if self.walks.walks_per_node == 0 || self.walks.walk_length == 0 {
            return Err(Error::Config(
                "walks.walks_per_node and walks.walk_length must be positive".into(),
            ));
        }
        if self.skipgram.window == 0 || !(self.skipgram.lr > 0.0) {
            return Err(Error::Config(
                "skipgram.window and skipgram.lr must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str::<Config>(&text)
            .map_err(|e| Error::format(path, e.to_string()))
            .and_then(|c| c.validate().map(|_| c))
    }

    /// Hex SHA-256 of the canonical TOML serialization.
    pub fn hash(&self) -> String {
        hash_text(&self.to_toml())
    }
}

pub fn hash_text(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Mixes a tag into a seed so that independent consumers get independent
/// generator streams.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut x = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let mut c = Config::default();
        c.train.kappa = 0.6;
        c.contrast.mode = crate::contrastive::ContrastMode::ProteinAnchor;
        let back = Config::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c = Config::from_toml("seed = 3\n[train]\nkappa = 0.3\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.train.kappa, 0.3);
        assert_eq!(c.train.batch_size, 32);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(Config::from_toml("[train]\nkapa = 1.0\n").is_err());
        assert!(Config::from_toml("[contrast]\ntemperature = 0.0\n").is_err());
        assert!(Config::from_toml("[train]\nseq_on = false\ngraph_on = false\n").is_err());
    }
}
