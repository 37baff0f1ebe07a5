//! Synthetic PPI datasets with planted protein communities.
//!
//! Sequences of a community share a biased residue composition and a set
//! of planted motifs; the graph is a stochastic block model. Positive pairs
//! join two proteins of one community, negatives join two communities.
//! `signal` scales every community cue; at 0 the communities are
//! indistinguishable.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::DatasetManifest;
use crate::config::derive_seed;
use crate::error::{Error, Result};
use crate::features::{ProteinSequence, ALPHABET};
use crate::graph::PpiGraph;
use crate::training::PairSample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub communities: usize,
    pub proteins_per_community: usize,
    pub num_pairs: usize,
    pub positive_fraction: f64,
    /// Community signal strength in `[0, 1]`.
    pub signal: f64,
    pub p_in: f64,
    pub p_out: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub motifs_per_community: usize,
    pub motif_len: usize,
    pub k: usize,
    pub d: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            communities: 2,
            proteins_per_community: 50,
            num_pairs: 400,
            positive_fraction: 0.5,
            signal: 1.0,
            p_in: 0.15,
            p_out: 0.01,
            min_len: 40,
            max_len: 60,
            motifs_per_community: 3,
            motif_len: 6,
            k: 3,
            d: 32,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.communities < 2 || self.proteins_per_community < 4 {
            return Err(Error::Config(
                "need at least 2 communities of at least 4 proteins".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.signal) || !(0.0..=1.0).contains(&self.positive_fraction) {
            return Err(Error::Config(
                "signal and positive_fraction must lie in [0, 1]".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.p_in) || !(0.0..=1.0).contains(&self.p_out) {
            return Err(Error::Config("p_in and p_out must lie in [0, 1]".into()));
        }
        if self.min_len < 2 || self.max_len < self.min_len || self.motif_len > self.min_len {
            return Err(Error::Config(
                "need 2 <= min_len <= max_len and motif_len <= min_len".into(),
            ));
        }
        if self.d == 0 {
            return Err(Error::Config("d must be positive".into()));
        }
        Ok(())
    }

    pub fn num_proteins(&self) -> usize {
        self.communities * self.proteins_per_community
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub sequences: Vec<ProteinSequence>,
    /// Community of each protein, aligned with `sequences`.
    pub communities: Vec<usize>,
    pub pairs: Vec<PairSample>,
    pub graph: PpiGraph,
}

fn protein_id(i: usize) -> String {
    format!("P{i:04}")
}

pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let n = cfg.num_proteins();
    let communities: Vec<usize> = (0..n).map(|i| i % cfg.communities).collect();
    let ids: Vec<String> = (0..n).map(protein_id).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 21));
    let mut preferred = Vec::with_capacity(cfg.communities);
    let mut motifs = Vec::with_capacity(cfg.communities);
    for _ in 0..cfg.communities {
        let mut letters = ALPHABET.to_vec();
        letters.shuffle(&mut rng);
        letters.truncate(ALPHABET.len() / 2);
        preferred.push(letters);
        let m: Vec<Vec<u8>> = (0..cfg.motifs_per_community)
            .map(|_| {
                (0..cfg.motif_len)
                    .map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())])
                    .collect()
            })
            .collect();
        motifs.push(m);
    }

    let mut sequences = Vec::with_capacity(n);
    for (i, &c) in communities.iter().enumerate() {
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let mut residues: Vec<u8> = (0..len)
            .map(|_| {
                if rng.random::<f64>() < 0.5 * cfg.signal {
                    preferred[c][rng.random_range(0..preferred[c].len())]
                } else {
                    ALPHABET[rng.random_range(0..ALPHABET.len())]
                }
            })
            .collect();
        for motif in &motifs[c] {
            if rng.random::<f64>() < cfg.signal {
                let at = rng.random_range(0..=len - motif.len());
                residues[at..at + motif.len()].copy_from_slice(motif);
            }
        }
        let text = String::from_utf8(residues).expect("ASCII residues");
        sequences.push(ProteinSequence::new(ids[i].clone(), &text, false)?);
    }

    let p_mid = 0.5 * (cfg.p_in + cfg.p_out);
    let p_in = p_mid + cfg.signal * (cfg.p_in - p_mid);
    let p_out = p_mid + cfg.signal * (cfg.p_out - p_mid);
    let mut graph = PpiGraph::new();
    for id in &ids {
        graph.add_node(id);
    }
    for u in 0..n {
        for v in u + 1..n {
            let p = if communities[u] == communities[v] {
                p_in
            } else {
                p_out
            };
            if rng.random::<f64>() < p {
                graph.insert_edge(&ids[u], &ids[v], 1.0)?;
            }
        }
    }

    let n_pos = (cfg.num_pairs as f64 * cfg.positive_fraction).round() as usize;
    let n_neg = cfg.num_pairs - n_pos;
    let intra = cfg.communities * cfg.proteins_per_community * (cfg.proteins_per_community - 1) / 2;
    let inter = n * (n - 1) / 2 - intra;
    if n_pos > intra || n_neg > inter {
        return Err(Error::Config(format!(
            "cannot draw {n_pos} positive and {n_neg} negative distinct pairs from {n} proteins"
        )));
    }
    let mut seen = BTreeSet::new();
    let mut pairs = Vec::with_capacity(cfg.num_pairs);
    let (mut pos, mut neg) = (0, 0);
    while pos < n_pos || neg < n_neg {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a == b || !seen.insert((a.min(b), a.max(b))) {
            continue;
        }
        let same = communities[a] == communities[b];
        if same && pos < n_pos {
            pos += 1;
            pairs.push(PairSample::new(ids[a].clone(), ids[b].clone(), 1));
        } else if !same && neg < n_neg {
            neg += 1;
            pairs.push(PairSample::new(ids[a].clone(), ids[b].clone(), 0));
        } else {
            seen.remove(&(a.min(b), a.max(b)));
        }
    }

    Ok(SyntheticDataset {
        sequences,
        communities,
        pairs,
        graph,
    })
}

/// Writes `sequences.fasta`, `pairs.tsv`, `edges.tsv`, `communities.tsv`
/// and `manifest.toml` into `dir`. Returns the manifest path.
pub fn write_synthetic(dir: &Path, cfg: &SynthConfig, data: &SyntheticDataset) -> Result<PathBuf> {
    super::fasta::write_fasta(&dir.join("sequences.fasta"), &data.sequences)?;
    super::pairs::write_pairs(&dir.join("pairs.tsv"), &data.pairs)?;
    super::edges::write_edges(&dir.join("edges.tsv"), &data.graph)?;
    let comm: String = data
        .sequences
        .iter()
        .zip(&data.communities)
        .map(|(s, c)| format!("{}\t{c}\n", s.id()))
        .collect();
    super::write_file(&dir.join("communities.tsv"), comm.as_bytes())?;
    let manifest = DatasetManifest {
        name: "synthetic".into(),
        fasta: "sequences.fasta".into(),
        pairs: "pairs.tsv".into(),
        edges: "edges.tsv".into(),
        remb: None,
        k: cfg.k,
        d: cfg.d,
    };
    let path = dir.join("manifest.toml");
    super::write_file(&path, manifest.to_toml().as_bytes())?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced() {
        let cfg = SynthConfig::default();
        let a = generate_synthetic(&cfg, 1).unwrap();
        assert_eq!(a, generate_synthetic(&cfg, 1).unwrap());
        assert_ne!(a.pairs, generate_synthetic(&cfg, 2).unwrap().pairs);
        assert_eq!(a.pairs.len(), 400);
        assert_eq!(a.pairs.iter().filter(|p| p.label == 1).count(), 200);
        let distinct: BTreeSet<_> = a
            .pairs
            .iter()
            .map(|p| (p.id_a.clone(), p.id_b.clone()))
            .collect();
        assert_eq!(distinct.len(), 400);
    }

    #[test]
    fn labels_follow_communities() {
        let cfg = SynthConfig::default();
        let d = generate_synthetic(&cfg, 5).unwrap();
        let comm = |id: &str| d.communities[id[1..].parse::<usize>().unwrap()];
        for p in &d.pairs {
            assert_eq!(p.label == 1, comm(&p.id_a) == comm(&p.id_b));
        }
        for s in &d.sequences {
            assert!((cfg.min_len..=cfg.max_len).contains(&s.len()));
        }
    }

    #[test]
    fn rejects_tiny_communities() {
        let cfg = SynthConfig {
            proteins_per_community: 3,
            ..SynthConfig::default()
        };
        assert!(generate_synthetic(&cfg, 0).is_err());
    }
}
