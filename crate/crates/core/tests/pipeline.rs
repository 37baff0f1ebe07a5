mod common;

use scmppi::graph::remove_leakage_edges;
use scmppi::io::checkpoint::{load_checkpoint, save_checkpoint};
use scmppi::io::node_table::{read_node_table, write_node_table};
use scmppi::metrics::{evaluate, roc_auc};
use scmppi::training::{
    crossval, featurize_all, fit, predict, split_validation, stratified_folds, PairSample,
};

#[test]
fn checkpoint_reload_scores_identically() {
    let l = common::load_synthetic(&common::tiny_synth(), 11, 7);
    let config = common::tiny_config();
    let (outcome, table) = fit(
        &l.data.pairs,
        &l.sequences,
        &l.data.graph,
        &l.embeddings,
        &config,
    )
    .unwrap();
    let features = featurize_all(&l.sequences, &l.embeddings, config.encoder.k).unwrap();
    let before = predict(&outcome.model, &l.data.pairs, &features, &table).unwrap();

    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&dir.path().join("m.ckpt"), &outcome.model).unwrap();
    write_node_table(&dir.path().join("n.tsv"), &table).unwrap();
    let model = load_checkpoint(&dir.path().join("m.ckpt")).unwrap();
    let table2 = read_node_table(&dir.path().join("n.tsv"), table.dim()).unwrap();
    assert_eq!(model.config, outcome.model.config);
    assert_eq!(model.best_epoch, outcome.model.best_epoch);
    for ((na, ta), (nb, tb)) in model.params.iter().zip(outcome.model.params.iter()) {
        assert_eq!((na, ta.shape(), ta.data()), (nb, tb.shape(), tb.data()));
    }
    let after = predict(&model, &l.data.pairs, &features, &table2).unwrap();
    assert_eq!(before, after);
}

#[test]
fn validation_mcc_round_trips() {
    let l = common::load_synthetic(&common::tiny_synth(), 12, 7);
    let mut config = common::tiny_config();
    config.train.max_epochs = 4;
    let (outcome, table) = fit(
        &l.data.pairs,
        &l.sequences,
        &l.data.graph,
        &l.embeddings,
        &config,
    )
    .unwrap();
    let (_, val) = split_validation(&l.data.pairs, config.train.val_fraction, config.seed);
    let features = featurize_all(&l.sequences, &l.embeddings, config.encoder.k).unwrap();
    let scores = predict(&outcome.model, &val, &features, &table).unwrap();
    let labels: Vec<u8> = val.iter().map(|p| p.label).collect();
    let mcc = evaluate(&scores, &labels).unwrap().mcc;
    assert_eq!(mcc, outcome.model.best_val_mcc);
    let best = &outcome.log[outcome.model.best_epoch - 1];
    assert_eq!(best.val_mcc, mcc);
}

#[test]
fn crossval_metrics_reproduce_from_saved_scores() {
    let l = common::load_synthetic(&common::tiny_synth(), 13, 7);
    let mut config = common::tiny_config();
    config.train.max_epochs = 2;
    let report = crossval(
        &l.data.pairs,
        &l.sequences,
        &l.data.graph,
        &l.embeddings,
        &config,
    )
    .unwrap();
    let features = featurize_all(&l.sequences, &l.embeddings, config.encoder.k).unwrap();
    let labels: Vec<u8> = l.data.pairs.iter().map(|p| p.label).collect();
    let folds = stratified_folds(&labels, config.train.folds, config.seed).unwrap();
    let mut covered = vec![false; l.data.pairs.len()];
    for f in &report.folds {
        let test: Vec<PairSample> = f
            .test_indices
            .iter()
            .map(|&i| l.data.pairs[i].clone())
            .collect();
        for &i in &f.test_indices {
            assert_eq!(folds[i] + 1, f.fold);
            assert!(!covered[i]);
            covered[i] = true;
        }
        let scores = predict(&f.model, &test, &features, &f.node_table).unwrap();
        assert_eq!(scores, f.scores);
        let y: Vec<u8> = test.iter().map(|p| p.label).collect();
        assert_eq!(evaluate(&scores, &y).unwrap(), f.metrics);
    }
    assert!(covered.iter().all(|&c| c));
    let n = report.folds.len() as f64;
    let mean_auc = report.folds.iter().map(|f| f.metrics.auc).sum::<f64>() / n;
    assert!((mean_auc - report.mean.auc).abs() < 1e-12);
}

#[test]
fn empty_pair_list_scores_to_empty() {
    let l = common::load_synthetic(&common::tiny_synth(), 14, 7);
    let mut config = common::tiny_config();
    config.train.max_epochs = 1;
    let (outcome, table) = fit(
        &l.data.pairs,
        &l.sequences,
        &l.data.graph,
        &l.embeddings,
        &config,
    )
    .unwrap();
    let features = featurize_all(&l.sequences, &l.embeddings, config.encoder.k).unwrap();
    assert!(predict(&outcome.model, &[], &features, &table)
        .unwrap()
        .is_empty());
    let unknown = [PairSample::new("P0000", "NOPE", 1)];
    assert!(predict(&outcome.model, &unknown, &features, &table).is_err());
}

#[test]
fn separable_toy_is_learned() {
    let syn = scmppi::io::synth::SynthConfig {
        proteins_per_community: 25,
        num_pairs: 200,
        k: 1,
        d: 8,
        ..Default::default()
    };
    let l = common::load_synthetic(&syn, 15, 7);
    let mut config = common::tiny_config();
    config.encoder.fusion_dim = 16;
    config.encoder.seq_dim = 16;
    config.train.max_epochs = 30;
    config.train.val_fraction = 0.2;
    let (outcome, _) = fit(
        &l.data.pairs,
        &l.sequences,
        &l.data.graph,
        &l.embeddings,
        &config,
    )
    .unwrap();
    assert!(
        outcome.model.best_val_mcc >= 0.8,
        "best validation MCC {}",
        outcome.model.best_val_mcc
    );
}

/// With no community signal the held-out AUC stays near chance.
#[test]
fn null_signal_stays_near_chance() {
    let syn = scmppi::io::synth::SynthConfig {
        signal: 0.0,
        k: 1,
        d: 8,
        ..Default::default()
    };
    let mut aucs = Vec::new();
    for seed in 0..5 {
        let l = common::load_synthetic(&syn, 100 + seed, 7);
        let mut config = common::tiny_config();
        config.seed = seed;
        config.train.max_epochs = 10;
        let (train_pairs, test) = split_validation(&l.data.pairs, 0.2, seed + 50);
        let held: Vec<(String, String)> = test
            .iter()
            .map(|p| (p.id_a.clone(), p.id_b.clone()))
            .collect();
        let (graph, _) = remove_leakage_edges(&l.data.graph, &held);
        let (outcome, table) =
            fit(&train_pairs, &l.sequences, &graph, &l.embeddings, &config).unwrap();
        let features = featurize_all(&l.sequences, &l.embeddings, config.encoder.k).unwrap();
        let scores = predict(&outcome.model, &test, &features, &table).unwrap();
        let y: Vec<u8> = test.iter().map(|p| p.label).collect();
        aucs.push(roc_auc(&scores, &y).unwrap());
    }
    let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
    assert!((mean - 0.5).abs() <= 0.05, "mean AUC {mean} from {aucs:?}");
}
