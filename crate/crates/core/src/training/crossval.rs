use std::collections::BTreeMap;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::trainer::{
    featurize_all, predict, split_validation, train, train_node_embeddings, EpochRecord,
};
use super::{PairSample, TrainedModel};
use crate::config::{derive_seed, Config};
use crate::error::{Error, Result};
use crate::features::{EmbeddingSource, ProteinSequence};
use crate::graph::{remove_leakage_edges, PpiGraph};
use crate::metrics::{evaluate, MetricReport};
use crate::skipgram::NodeEmbeddingTable;

/// Stratified fold assignment. Each class is shuffled with a seeded RNG
/// and dealt round-robin; the dealing offset carries over from one class
/// to the next so fold sizes differ by at most one.
pub fn stratified_folds(labels: &[u8], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::Config("folds must be at least 2".into()));
    }
    if labels.len() < folds {
        return Err(Error::Data(format!(
            "{} samples cannot be split into {folds} folds",
            labels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 4));
    let mut assignment = vec![0usize; labels.len()];
    let mut next = 0usize;
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            assignment[i] = next % folds;
            next += 1;
        }
    }
    if let Some(i) = labels.iter().position(|&l| l > 1) {
        return Err(Error::Data(format!(
            "sample {}: label {} is not binary",
            i + 1,
            labels[i]
        )));
    }
    for f in 0..folds {
        let mut seen = [false; 2];
        for (i, &a) in assignment.iter().enumerate() {
            if a == f {
                seen[labels[i] as usize] = true;
            }
        }
        if !(seen[0] && seen[1]) {
            return Err(Error::Data(format!(
                "stratification failed: fold {} holds a single class",
                f + 1
            )));
        }
    }
    Ok(assignment)
}

#[derive(Clone, Debug)]
pub struct FoldResult {
    pub fold: usize,
    pub metrics: MetricReport,
    pub model: TrainedModel,
    pub node_table: NodeEmbeddingTable,
    /// Indices into the dataset's pair list.
    pub test_indices: Vec<usize>,
    pub removed_edges: usize,
    /// Graph the fold's node embeddings were trained on.
    pub train_graph: PpiGraph,
    pub log: Vec<EpochRecord>,
    /// Test-fold scores in the order of `test_indices`.
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct CrossValReport {
    pub folds: Vec<FoldResult>,
    pub mean: MetricReport,
    /// Sample standard deviation across folds.
    pub std: MetricReport,
}

impl CrossValReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("fold");
        for c in MetricReport::COLUMNS {
            out.push('\t');
            out.push_str(c);
        }
        out.push('\n');
        let mut row = |name: String, vals: [f64; 8]| {
            out.push_str(&name);
            for v in vals {
                out.push_str(&format!("\t{v:.6}"));
            }
            out.push('\n');
        };
        for f in &self.folds {
            row(f.fold.to_string(), f.metrics.values());
        }
        row("mean".into(), self.mean.values());
        row("std".into(), self.std.values());
        out
    }
}

fn summarize(reports: &[MetricReport]) -> (MetricReport, MetricReport) {
    let n = reports.len() as f64;
    let mut mean = [0.0; 8];
    let mut std = [0.0; 8];
    for r in reports {
        for (m, v) in mean.iter_mut().zip(r.values()) {
            *m += v / n;
        }
    }
    if reports.len() > 1 {
        for r in reports {
            for ((s, m), v) in std.iter_mut().zip(mean).zip(r.values()) {
                *s += (v - m) * (v - m);
            }
        }
        for s in &mut std {
            *s = (*s / (n - 1.0)).sqrt();
        }
    }
    (
        MetricReport::from_values(mean),
        MetricReport::from_values(std),
    )
}

/// K-fold cross-validation. Each fold removes its test pairs' edges from
/// the graph, retrains node embeddings, trains on the remaining pairs with
/// a stratified validation hold-out and scores the test fold.
pub fn crossval(
    pairs: &[PairSample],
    sequences: &BTreeMap<String, ProteinSequence>,
    graph: &PpiGraph,
    embeddings: &EmbeddingSource,
    config: &Config,
) -> Result<CrossValReport> {
    config.validate()?;
    let k = config.train.folds;
    let labels: Vec<u8> = pairs.iter().map(|p| p.label).collect();
    let assignment = stratified_folds(&labels, k, config.seed)?;
    let features = featurize_all(sequences, embeddings, config.encoder.k)?;

    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let test_indices: Vec<usize> = (0..pairs.len()).filter(|&i| assignment[i] == f).collect();
        let test: Vec<PairSample> = test_indices.iter().map(|&i| pairs[i].clone()).collect();
        let rest: Vec<PairSample> = (0..pairs.len())
            .filter(|&i| assignment[i] != f)
            .map(|i| pairs[i].clone())
            .collect();

        let mut fold_config = config.clone();
        fold_config.seed = derive_seed(config.seed, 100 + f as u64);
        let (train_pairs, val_pairs) =
            split_validation(&rest, config.train.val_fraction, fold_config.seed);

        let eval: Vec<(String, String)> = test
            .iter()
            .map(|p| (p.id_a.clone(), p.id_b.clone()))
            .collect();
        let (fold_graph, removed_edges) = remove_leakage_edges(graph, &eval);
        let node_table = if config.train.graph_on {
            train_node_embeddings(&fold_graph, &fold_config, fold_config.seed)?
        } else {
            NodeEmbeddingTable::new(config.encoder.graph_dim)
        };

        let outcome = train(
            &train_pairs,
            &val_pairs,
            &features,
            &node_table,
            &fold_config,
        )?;
        let scores = predict(&outcome.model, &test, &features, &node_table)?;
        let test_labels: Vec<u8> = test.iter().map(|p| p.label).collect();
        let metrics = evaluate(&scores, &test_labels)?;
        info!(
            "fold {}: auc {:.4} mcc {:.4} ({} edges removed, best epoch {})",
            f + 1,
            metrics.auc,
            metrics.mcc,
            removed_edges,
            outcome.model.best_epoch
        );
        folds.push(FoldResult {
            fold: f + 1,
            metrics,
            model: outcome.model,
            node_table,
            test_indices,
            removed_edges,
            train_graph: fold_graph,
            log: outcome.log,
            scores,
        });
    }
    let reports: Vec<MetricReport> = folds.iter().map(|f| f.metrics).collect();
    let (mean, std) = summarize(&reports);
    Ok(CrossValReport { folds, mean, std })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_samples_five_folds() {
        let labels = [0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        let a = stratified_folds(&labels, 5, 9).unwrap();
        for f in 0..5 {
            let members: Vec<usize> = (0..10).filter(|&i| a[i] == f).collect();
            assert_eq!(members.len(), 2);
            assert_ne!(labels[members[0]], labels[members[1]]);
        }
        assert_eq!(a, stratified_folds(&labels, 5, 9).unwrap());
    }

    #[test]
    fn single_class_fold_rejected() {
        let labels = [0, 0, 0, 0, 1];
        assert!(matches!(
            stratified_folds(&labels, 2, 1),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn too_few_samples() {
        assert!(stratified_folds(&[0, 1], 3, 1).is_err());
    }

    #[test]
    fn summary_uses_sample_std() {
        let a = MetricReport::from_values([1.0; 8]);
        let b = MetricReport::from_values([3.0; 8]);
        let (m, s) = summarize(&[a, b]);
        assert_eq!(m.values(), [2.0; 8]);
        assert!((s.acc - 2f64.sqrt()).abs() < 1e-12);
    }
}
