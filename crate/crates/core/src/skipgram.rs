//! Skip-gram with negative sampling over random-walk corpora.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::WalkCorpus;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkipGramConfig {
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Initial learning rate, decayed linearly towards `lr * 1e-4`.
    pub lr: f64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            window: 10,
            negatives: 5,
            epochs: 5,
            lr: 0.025,
        }
    }
}

/// Per-node vectors with a fallback for ids that were never embedded.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeEmbeddingTable {
    dim: usize,
    vectors: BTreeMap<String, Vec<f32>>,
    fallback: Vec<f32>,
}

impl NodeEmbeddingTable {
    pub fn new(dim: usize) -> Self {
        NodeEmbeddingTable {
            dim,
            vectors: BTreeMap::new(),
            fallback: vec![0.0; dim],
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, v: Vec<f32>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::Dimension(format!(
                "node vector of length {} in a table of dimension {}",
                v.len(),
                self.dim
            )));
        }
        self.vectors.insert(id.into(), v);
        Ok(())
    }

    pub fn with_fallback(mut self, fallback: Vec<f32>) -> Result<Self> {
        if fallback.len() != self.dim {
            return Err(Error::Dimension(
                "fallback vector has the wrong dimension".into(),
            ));
        }
        self.fallback = fallback;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.vectors.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.vectors.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn fallback(&self) -> &[f32] {
        &self.fallback
    }
}

/// Stored vector for `id`, or the fallback. Warns once per missing id.
pub fn node_embedding<'a>(table: &'a NodeEmbeddingTable, id: &str) -> &'a [f32] {
    static WARNED: Mutex<BTreeSet<String>> = Mutex::new(BTreeSet::new());
    match table.get(id) {
        Some(v) => v,
        None => {
            let mut seen = WARNED.lock().unwrap_or_else(|e| e.into_inner());
            if seen.insert(id.to_string()) {
                warn!("no graph embedding for {id}; using fallback vector");
            }
            table.fallback()
        }
    }
}

/// Cumulative unigram^(3/4) distribution for negative draws.
struct NegativeSampler {
    cdf: Vec<f64>,
}

impl NegativeSampler {
    fn new(counts: &[usize]) -> Self {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = counts
            .iter()
            .map(|&c| {
                acc += (c as f64).powf(0.75);
                acc
            })
            .collect();
        let total = acc.max(f64::MIN_POSITIVE);
        cdf.iter_mut().for_each(|x| *x /= total);
        NegativeSampler { cdf }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.cdf
            .partition_point(|&c| c <= u)
            .min(self.cdf.len() - 1)
    }
}

#[inline]
fn sigmoid(x: f32) -> f32 {
    if x > 8.0 {
        1.0
    } else if x < -8.0 {
        0.0
    } else {
        1.0 / (1.0 + (-x).exp())
    }
}

/// Trains `dim`-dimensional node vectors on `corpus`, whose walks index into
/// `ids`. Every (center, context) pair within `window` positions is a
/// positive example; `negatives` noise nodes per pair are drawn from the
/// unigram^(3/4) distribution.
pub fn train_skipgram(
    corpus: &WalkCorpus,
    ids: &[String],
    dim: usize,
    cfg: &SkipGramConfig,
    seed: u64,
) -> Result<NodeEmbeddingTable> {
    if corpus.is_empty() || ids.is_empty() {
        return Err(Error::Training(
            "skip-gram needs a nonempty walk corpus".into(),
        ));
    }
    if dim == 0 || cfg.window == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config(
            "skip-gram dimension, window and learning rate must be positive".into(),
        ));
    }
    let n = ids.len();
    let mut counts = vec![0usize; n];
    for walk in &corpus.walks {
        for &v in walk {
            if v >= n {
                return Err(Error::Contract(format!(
                    "walk visits node {v} outside 0..{n}"
                )));
            }
            counts[v] += 1;
        }
    }
    let sampler = NegativeSampler::new(&counts);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 0.5 / dim as f32;
    let mut input: Vec<f32> = (0..n * dim)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    let mut output = vec![0.0f32; n * dim];
    let mut grad = vec![0.0f32; dim];

    let total = (cfg.epochs * corpus.num_tokens()).max(1) as f64;
    let mut seen = 0usize;
    for _ in 0..cfg.epochs {
        for walk in &corpus.walks {
            for (pos, &center) in walk.iter().enumerate() {
                let lr = (cfg.lr * (1.0 - seen as f64 / total)).max(cfg.lr * 1e-4) as f32;
                seen += 1;
                let lo = pos.saturating_sub(cfg.window);
                let hi = (pos + cfg.window + 1).min(walk.len());
                for (cpos, &context) in walk.iter().enumerate().take(hi).skip(lo) {
                    if cpos == pos {
                        continue;
                    }
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    let inp = center * dim;
                    for d in 0..=cfg.negatives {
                        let (target, label) = if d == 0 {
                            (context, 1.0f32)
                        } else {
                            let t = sampler.sample(&mut rng);
                            if t == context {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let out = target * dim;
                        let dot: f32 = (0..dim).map(|i| input[inp + i] * output[out + i]).sum();
                        let g = (label - sigmoid(dot)) * lr;
                        for i in 0..dim {
                            grad[i] += g * output[out + i];
                            output[out + i] += g * input[inp + i];
                        }
                    }
                    for i in 0..dim {
                        input[inp + i] += grad[i];
                    }
                }
            }
        }
    }

    if input.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric(
            "skip-gram produced non-finite vectors".into(),
        ));
    }
    let mut table = NodeEmbeddingTable::new(dim);
    for (v, id) in ids.iter().enumerate() {
        table.insert(id.clone(), input[v * dim..(v + 1) * dim].to_vec())?;
    }
    Ok(table)
}
