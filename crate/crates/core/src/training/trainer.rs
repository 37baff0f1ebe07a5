use std::collections::BTreeMap;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{
    bce_on_tape, build_params, classify_hidden, classify_pairs, pair_hidden, TrainedModel,
};
use super::PairSample;
use crate::autodiff::{Tape, Var};
use crate::config::{derive_seed, Config};
use crate::contrastive::{psup_loss, ContrastBatch, ContrastMode};
use crate::encoder::{encode_sequence, fuse, node_input, project, zero_sequence};
use crate::error::{Error, Result};
use crate::features::{EmbeddingSource, ProteinSequence, SeqFeatureBundle};
use crate::graph::{generate_walks, remove_leakage_edges, PpiGraph};
use crate::metrics::{basic_metrics, confusion, DEFAULT_THRESHOLD};
use crate::params::ParamStore;
use crate::skipgram::{node_embedding, train_skipgram, NodeEmbeddingTable};
use crate::tensor::Scalar;

/// Precomputed sequence features keyed by protein id.
#[derive(Clone, Debug, Default)]
pub struct FeatureCache {
    bundles: BTreeMap<String, SeqFeatureBundle>,
}

impl FeatureCache {
    pub fn get(&self, id: &str) -> Option<&SeqFeatureBundle> {
        self.bundles.get(id)
    }

    pub fn len(&self) -> usize {
        self.bundles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bundles.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, bundle: SeqFeatureBundle) {
        self.bundles.insert(id.into(), bundle);
    }
}

pub fn featurize_all(
    sequences: &BTreeMap<String, ProteinSequence>,
    embeddings: &EmbeddingSource,
    k: usize,
) -> Result<FeatureCache> {
    let mut cache = FeatureCache::default();
    for (id, seq) in sequences {
        let emb = embeddings.embed(seq)?;
        cache.insert(id.clone(), SeqFeatureBundle::compute(seq, &emb, k)?);
    }
    Ok(cache)
}

/// Node2Vec-style embeddings of `graph` using the walk and skip-gram
/// settings of `config`. An empty graph gives an empty table.
pub fn train_node_embeddings(
    graph: &PpiGraph,
    config: &Config,
    seed: u64,
) -> Result<NodeEmbeddingTable> {
    let dim = config.encoder.graph_dim;
    if graph.num_nodes() == 0 {
        return Ok(NodeEmbeddingTable::new(dim));
    }
    let walks = generate_walks(graph, &config.walks, derive_seed(seed, 11))?;
    train_skipgram(
        &walks,
        graph.ids(),
        dim,
        &config.skipgram,
        derive_seed(seed, 12),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean total loss per minibatch.
    pub train_loss: f64,
    pub bce: f64,
    pub psup: f64,
    pub filtered_negatives: usize,
    pub val_mcc: f64,
}

impl EpochRecord {
    pub const HEADER: &'static str = "epoch\ttrain_loss\tbce\tpsup\tfiltered_negatives\tval_mcc";

    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{:.6}",
            self.epoch, self.train_loss, self.bce, self.psup, self.filtered_negatives, self.val_mcc
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub log: Vec<EpochRecord>,
    /// Number of contrastive-loss evaluations.
    pub contrast_calls: usize,
    /// Parameters after every optimizer step, when requested.
    pub trajectory: Vec<ParamStore<f32>>,
}

struct BatchLoss {
    total: Var,
    bce: f64,
    psup: f64,
    discarded: usize,
    contrast_called: bool,
}

/// Protein representations `F` for `ids`, recorded on `tape`.
fn represent<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    config: &Config,
    ids: &[&str],
    features: &FeatureCache,
    table: &NodeEmbeddingTable,
) -> Result<Vec<Var>> {
    let enc = &config.encoder;
    let zero_graph = vec![0.0f32; enc.graph_dim];
    ids.iter()
        .map(|&id| {
            let seq_vec = if config.train.seq_on {
                let bundle = features
                    .get(id)
                    .ok_or_else(|| Error::Data(format!("no sequence features for protein {id}")))?;
                encode_sequence(tape, store, enc, bundle)?
            } else {
                zero_sequence(tape, enc)
            };
            let node = if config.train.graph_on {
                let v = node_embedding(table, id);
                if v.len() != enc.graph_dim {
                    return Err(Error::Config(format!(
                        "graph embeddings have dimension {}, encoder expects {}",
                        v.len(),
                        enc.graph_dim
                    )));
                }
                node_input(tape, v)?
            } else {
                node_input(tape, &zero_graph)?
            };
            fuse(tape, store, enc, seq_vec, node)
        })
        .collect()
}

/// Distinct ids in order of first appearance and, per pair, their slots.
fn unique_ids<'a>(pairs: &[&'a PairSample]) -> (Vec<&'a str>, Vec<(usize, usize)>) {
    let mut ids: Vec<&str> = Vec::new();
    let mut slot: BTreeMap<&str, usize> = BTreeMap::new();
    let mut idx = |id: &'a str, ids: &mut Vec<&'a str>| {
        *slot.entry(id).or_insert_with(|| {
            ids.push(id);
            ids.len() - 1
        })
    };
    let slots = pairs
        .iter()
        .map(|p| (idx(&p.id_a, &mut ids), idx(&p.id_b, &mut ids)))
        .collect();
    (ids, slots)
}

fn pair_inputs<T: Scalar>(
    tape: &mut Tape<T>,
    reps: &[Var],
    slots: &[(usize, usize)],
) -> Result<Var> {
    let rows = slots
        .iter()
        .map(|&(a, b)| tape.concat(&[reps[a], reps[b]]))
        .collect::<Result<Vec<_>>>()?;
    tape.stack(&rows)
}

fn batch_loss<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    config: &Config,
    pairs: &[&PairSample],
    features: &FeatureCache,
    table: &NodeEmbeddingTable,
) -> Result<BatchLoss> {
    let (ids, slots) = unique_ids(pairs);
    let reps = represent(tape, store, config, &ids, features, table)?;
    let joined = pair_inputs(tape, &reps, &slots)?;
    let hidden = pair_hidden(tape, store, joined)?;
    let preds = classify_hidden(tape, store, hidden)?;
    let labels: Vec<u8> = pairs.iter().map(|p| p.label).collect();
    let bce = bce_on_tape(tape, preds, &labels)?;
    let bce_value = tape.value(bce).item().as_f64();

    if !config.train.cl_on {
        return Ok(BatchLoss {
            total: bce,
            bce: bce_value,
            psup: 0.0,
            discarded: 0,
            contrast_called: false,
        });
    }

    let cc = &config.contrast;
    let (z, batch) = match cc.mode {
        ContrastMode::PairLabel => {
            let z = project(tape, store, hidden)?;
            let zr = rows_f64(tape, z);
            (z, ContrastBatch::pair_labels(zr, &labels)?)
        }
        ContrastMode::ProteinAnchor => {
            let stacked = tape.stack(&reps)?;
            let z = project(tape, store, stacked)?;
            let mut positives = vec![Vec::new(); ids.len()];
            for (&(a, b), p) in slots.iter().zip(pairs) {
                if p.label == 1 && a != b {
                    positives[a].push(b);
                    positives[b].push(a);
                }
            }
            let zr = rows_f64(tape, z);
            (z, ContrastBatch::with_positive_sets(zr, positives)?)
        }
    };
    match psup_loss(&batch, cc.temperature, cc.neg_threshold, cc.eps) {
        Ok(out) => {
            let grad = out.grad.iter().map(|&g| T::from_f64(g)).collect();
            let psup = tape.external(&[z], out.loss, vec![grad])?;
            let weighted = tape.scale(psup, T::from_f64(config.train.kappa));
            let total = tape.add(bce, weighted)?;
            Ok(BatchLoss {
                total,
                bce: bce_value,
                psup: out.loss,
                discarded: out.report.total_discarded(),
                contrast_called: true,
            })
        }
        Err(Error::DegenerateBatch(msg)) => {
            debug!("contrastive term skipped: {msg}");
            Ok(BatchLoss {
                total: bce,
                bce: bce_value,
                psup: 0.0,
                discarded: 0,
                contrast_called: true,
            })
        }
        Err(e) => Err(e),
    }
}

fn rows_f64<T: Scalar>(tape: &Tape<T>, z: Var) -> Vec<Vec<f64>> {
    let t = tape.value(z);
    let d = *t.shape().last().expect("2-D projections");
    t.data()
        .chunks(d)
        .map(|r| r.iter().map(|x| x.as_f64()).collect())
        .collect()
}

/// Fusion-layer representations for each id, computed one protein per tape.
pub fn represent_proteins(
    store: &ParamStore<f32>,
    config: &Config,
    ids: &[&str],
    features: &FeatureCache,
    table: &NodeEmbeddingTable,
) -> Result<BTreeMap<String, Vec<f32>>> {
    let mut out = BTreeMap::new();
    for &id in ids {
        if out.contains_key(id) {
            continue;
        }
        let mut tape = Tape::<f32>::new();
        let rep = represent(&mut tape, store, config, &[id], features, table)?[0];
        out.insert(id.to_string(), tape.value(rep).data().to_vec());
    }
    Ok(out)
}

fn check_resolvable(pairs: &[PairSample], features: &FeatureCache) -> Result<()> {
    for (i, p) in pairs.iter().enumerate() {
        for id in [&p.id_a, &p.id_b] {
            if features.get(id).is_none() {
                return Err(Error::Data(format!(
                    "pair {} ({}, {}): unknown protein {id}",
                    i + 1,
                    p.id_a,
                    p.id_b
                )));
            }
        }
        if p.label > 1 {
            return Err(Error::Data(format!(
                "pair {}: label {} is not binary",
                i + 1,
                p.label
            )));
        }
    }
    Ok(())
}

const PREDICT_CHUNK: usize = 256;

fn score_with(
    store: &ParamStore<f32>,
    config: &Config,
    pairs: &[PairSample],
    features: &FeatureCache,
    table: &NodeEmbeddingTable,
) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let ids: Vec<&str> = pairs
        .iter()
        .flat_map(|p| [p.id_a.as_str(), p.id_b.as_str()])
        .collect();
    let reps = represent_proteins(store, config, &ids, features, table)?;
    let mut scores = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(PREDICT_CHUNK) {
        let mut tape = Tape::<f32>::new();
        let mut rows = Vec::with_capacity(chunk.len());
        for p in chunk {
            let mut v = reps[&p.id_a].clone();
            v.extend_from_slice(&reps[&p.id_b]);
            rows.push(v);
        }
        let width = rows[0].len();
        let joined = tape.constant(crate::tensor::Tensor::new(
            vec![chunk.len(), width],
            rows.concat(),
        )?);
        let preds = classify_pairs(&mut tape, store, joined)?;
        scores.extend(tape.value(preds).data().iter().map(|&x| x as f64));
    }
    Ok(scores)
}

fn mcc_of(scores: &[f64], pairs: &[PairSample]) -> Result<f64> {
    let labels: Vec<u8> = pairs.iter().map(|p| p.label).collect();
    Ok(basic_metrics(&confusion(scores, &labels, DEFAULT_THRESHOLD)?).mcc)
}

/// Minibatch training with AdamW and early stopping on validation MCC.
/// Keeps the parameters of the best-MCC epoch.
pub fn train(
    train_pairs: &[PairSample],
    val_pairs: &[PairSample],
    features: &FeatureCache,
    table: &NodeEmbeddingTable,
    config: &Config,
) -> Result<TrainOutcome> {
    train_inner(train_pairs, val_pairs, features, table, config, false)
}

/// [`train`] that also records the parameters after every optimizer step in
/// [`TrainOutcome::trajectory`].
pub fn train_traced(
    train_pairs: &[PairSample],
    val_pairs: &[PairSample],
    features: &FeatureCache,
    table: &NodeEmbeddingTable,
    config: &Config,
) -> Result<TrainOutcome> {
    train_inner(train_pairs, val_pairs, features, table, config, true)
}

fn train_inner(
    train_pairs: &[PairSample],
    val_pairs: &[PairSample],
    features: &FeatureCache,
    table: &NodeEmbeddingTable,
    config: &Config,
    record_trajectory: bool,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_pairs.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    check_resolvable(train_pairs, features)?;
    check_resolvable(val_pairs, features)?;
    if val_pairs.is_empty() {
        warn!("empty validation split; early stopping sees MCC 0 every epoch");
    }
    let tc = &config.train;
    let mut params = build_params(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 2));
    let mut order: Vec<usize> = (0..train_pairs.len()).collect();

    let mut best: Option<(usize, f64, ParamStore<f32>)> = None;
    let mut since_best = 0;
    let mut log = Vec::new();
    let mut contrast_calls = 0;
    let mut trajectory = Vec::new();

    for epoch in 1..=tc.max_epochs {
        order.shuffle(&mut rng);
        let (mut sum_total, mut sum_bce, mut sum_psup, mut discarded, mut batches) =
            (0.0, 0.0, 0.0, 0, 0);
        for (b, chunk) in order.chunks(tc.batch_size).enumerate() {
            let pairs: Vec<&PairSample> = chunk.iter().map(|&i| &train_pairs[i]).collect();
            let mut tape = Tape::<f32>::new();
            let out = batch_loss(&mut tape, &params, config, &pairs, features, table)?;
            let total = tape.value(out.total).item() as f64;
            if !total.is_finite() || !out.psup.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}, batch {}",
                    b + 1
                )));
            }
            contrast_calls += out.contrast_called as usize;
            tape.backward(out.total)?;
            params.adamw_step(&tape.param_grads(), &tc.optimizer)?;
            if record_trajectory {
                trajectory.push(params.clone());
            }
            sum_total += total;
            sum_bce += out.bce;
            sum_psup += out.psup;
            discarded += out.discarded;
            batches += 1;
        }

        let val_scores = score_with(&params, config, val_pairs, features, table)?;
        let val_mcc = mcc_of(&val_scores, val_pairs)?;
        let nb = batches as f64;
        let record = EpochRecord {
            epoch,
            train_loss: sum_total / nb,
            bce: sum_bce / nb,
            psup: sum_psup / nb,
            filtered_negatives: discarded,
            val_mcc,
        };
        info!("{}", record.to_tsv());
        log.push(record);

        if best.as_ref().is_none_or(|b| val_mcc > b.1) {
            best = Some((epoch, val_mcc, params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= tc.patience {
                debug!("early stop after epoch {epoch}");
                break;
            }
        }
    }

    let (best_epoch, best_val_mcc, params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model: TrainedModel {
            params,
            config: config.clone(),
            best_epoch,
            best_val_mcc,
        },
        log,
        contrast_calls,
        trajectory,
    })
}

/// Interaction scores in `(0, 1)` for each pair.
pub fn predict(
    model: &TrainedModel,
    pairs: &[PairSample],
    features: &FeatureCache,
    table: &NodeEmbeddingTable,
) -> Result<Vec<f64>> {
    check_resolvable(pairs, features)?;
    score_with(&model.params, &model.config, pairs, features, table)
}

/// Stratified hold-out: a `fraction` of each label class, chosen by a
/// seeded shuffle, becomes the validation split. Returns `(train, val)`.
pub fn split_validation(
    pairs: &[PairSample],
    fraction: f64,
    seed: u64,
) -> (Vec<PairSample>, Vec<PairSample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3));
    let mut val_idx = Vec::new();
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..pairs.len())
            .filter(|&i| pairs[i].label == class)
            .collect();
        idx.shuffle(&mut rng);
        let take =
            ((idx.len() as f64 * fraction).round() as usize).min(idx.len().saturating_sub(1));
        val_idx.extend_from_slice(&idx[..take]);
    }
    val_idx.sort_unstable();
    let mut train = Vec::with_capacity(pairs.len() - val_idx.len());
    let mut val = Vec::with_capacity(val_idx.len());
    let mut next = val_idx.iter().peekable();
    for (i, p) in pairs.iter().enumerate() {
        if next.peek() == Some(&&i) {
            next.next();
            val.push(p.clone());
        } else {
            train.push(p.clone());
        }
    }
    (train, val)
}

/// End-to-end training on a full dataset: stratified validation hold-out,
/// leakage-edge removal for the held-out pairs, graph embedding,
/// featurization and [`train`]. Returns the outcome and the node table the
/// model was trained with.
pub fn fit(
    pairs: &[PairSample],
    sequences: &BTreeMap<String, ProteinSequence>,
    graph: &PpiGraph,
    embeddings: &EmbeddingSource,
    config: &Config,
) -> Result<(TrainOutcome, NodeEmbeddingTable)> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::Data("dataset has no pairs".into()));
    }
    let (train_pairs, val_pairs) = split_validation(pairs, config.train.val_fraction, config.seed);
    let features = featurize_all(sequences, embeddings, config.encoder.k)?;
    let table = if config.train.graph_on {
        let eval: Vec<(String, String)> = val_pairs
            .iter()
            .map(|p| (p.id_a.clone(), p.id_b.clone()))
            .collect();
        let (g, removed) = remove_leakage_edges(graph, &eval);
        info!("removed {removed} validation edges before graph embedding");
        train_node_embeddings(&g, config, config.seed)?
    } else {
        NodeEmbeddingTable::new(config.encoder.graph_dim)
    };
    let outcome = train(&train_pairs, &val_pairs, &features, &table, config)?;
    Ok((outcome, table))
}
