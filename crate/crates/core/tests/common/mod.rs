#![allow(dead_code)]

use std::collections::BTreeMap;

use scmppi::config::Config;
use scmppi::encoder::EncoderConfig;
use scmppi::features::{EmbeddingSource, ProteinSequence};
use scmppi::io::synth::{generate_synthetic, SynthConfig, SyntheticDataset};

pub const DESK_TOML: &str = include_str!("../../../../configs/desk.toml");

pub fn desk_config() -> Config {
    Config::from_toml(DESK_TOML).expect("desk config parses")
}

/// Very small model for protocol tests on the tiny dataset.
pub fn tiny_config() -> Config {
    let mut c = desk_config();
    c.encoder = EncoderConfig {
        k: 1,
        embed_dim: 8,
        conv1_channels: 2,
        conv2_channels: 2,
        seq_dim: 8,
        fusion_dim: 8,
        proj_dim: 4,
        graph_dim: 4,
        ..EncoderConfig::default()
    };
    c.walks.walks_per_node = 4;
    c.walks.walk_length = 10;
    c.skipgram.epochs = 1;
    c.train.max_epochs = 3;
    c.train.batch_size = 8;
    c
}

pub fn tiny_synth() -> SynthConfig {
    SynthConfig {
        proteins_per_community: 12,
        num_pairs: 60,
        k: 1,
        d: 8,
        ..SynthConfig::default()
    }
}

pub struct Loaded {
    pub data: SyntheticDataset,
    pub sequences: BTreeMap<String, ProteinSequence>,
    pub embeddings: EmbeddingSource,
}

pub fn load_synthetic(cfg: &SynthConfig, seed: u64, embedder_seed: u64) -> Loaded {
    let data = generate_synthetic(cfg, seed).expect("synthetic dataset");
    let sequences = data
        .sequences
        .iter()
        .map(|s| (s.id().to_string(), s.clone()))
        .collect();
    Loaded {
        data,
        sequences,
        embeddings: EmbeddingSource::Toy {
            dim: cfg.d,
            seed: embedder_seed,
        },
    }
}
