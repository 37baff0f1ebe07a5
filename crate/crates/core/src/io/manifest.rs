//! Dataset manifests: a TOML file naming the FASTA, pair and edge files of
//! one dataset, plus optional precomputed residue embeddings.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::features::{load_residue_embeddings, EmbeddingSource, ProteinSequence};
use crate::graph::PpiGraph;
use crate::training::PairSample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub fasta: PathBuf,
    pub pairs: PathBuf,
    pub edges: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remb: Option<PathBuf>,
    /// Largest residue gap used for the pair tensor.
    pub k: usize,
    /// Residue embedding width.
    pub d: usize,
}

impl DatasetManifest {
    /// Parses a manifest; relative paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = super::read_text(path)?;
        let mut m: DatasetManifest =
            toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut m.fasta, &mut m.pairs, &mut m.edges] {
            *p = base.join(&*p);
        }
        if let Some(r) = m.remb.as_mut() {
            *r = base.join(&*r);
        }
        for p in [
            Some(&m.fasta),
            Some(&m.pairs),
            Some(&m.edges),
            m.remb.as_ref(),
        ]
        .into_iter()
        .flatten()
        {
            if !p.is_file() {
                return Err(Error::Data(format!(
                    "manifest {}: file {} does not exist",
                    path.display(),
                    p.display()
                )));
            }
        }
        if m.d == 0 {
            return Err(Error::format(path, "d must be positive"));
        }
        Ok(m)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}

/// A fully loaded dataset.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub sequences: BTreeMap<String, ProteinSequence>,
    pub pairs: Vec<PairSample>,
    pub graph: PpiGraph,
    pub embeddings: EmbeddingSource,
    pub k: usize,
    pub d: usize,
}

impl Dataset {
    pub fn load(manifest_path: &Path, config: &Config) -> Result<Self> {
        let m = DatasetManifest::load(manifest_path)?;
        let seqs = super::fasta::parse_fasta(&m.fasta, config.sanitize)?;
        let sequences: BTreeMap<String, ProteinSequence> =
            seqs.into_iter().map(|s| (s.id().to_string(), s)).collect();
        let pairs = super::pairs::parse_pairs(&m.pairs)?;
        for (i, p) in pairs.iter().enumerate() {
            for id in [&p.id_a, &p.id_b] {
                if !sequences.contains_key(id) {
                    return Err(Error::Data(format!(
                        "{}: pair {} references protein {id} with no sequence",
                        m.pairs.display(),
                        i + 1
                    )));
                }
            }
        }
        let graph = super::edges::parse_edges(&m.edges)?;
        let embeddings = match &m.remb {
            Some(path) => {
                let map = load_residue_embeddings(path)?;
                for (id, mat) in &map {
                    if mat.dim != m.d {
                        return Err(Error::Data(format!(
                            "{}: embedding {id} has width {}, manifest declares d = {}",
                            path.display(),
                            mat.dim,
                            m.d
                        )));
                    }
                    if let Some(seq) = sequences.get(id) {
                        if seq.len() != mat.rows {
                            return Err(Error::Data(format!(
                                "{}: embedding {id} has {} rows, sequence has {} residues",
                                path.display(),
                                mat.rows,
                                seq.len()
                            )));
                        }
                    }
                }
                EmbeddingSource::Precomputed(map)
            }
            None => EmbeddingSource::Toy {
                dim: m.d,
                seed: config.embedder_seed,
            },
        };
        info!(
            "dataset {}: {} proteins, {} pairs, {} edges",
            m.name,
            sequences.len(),
            pairs.len(),
            graph.num_edges()
        );
        Ok(Dataset {
            name: m.name,
            sequences,
            pairs,
            graph,
            embeddings,
            k: m.k,
            d: m.d,
        })
    }

    /// Copies the dataset's declared `k` and `D` into the encoder settings.
    pub fn apply_to(&self, config: &mut Config) {
        config.encoder.k = self.k;
        config.encoder.embed_dim = self.d;
    }
}
