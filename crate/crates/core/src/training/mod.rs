//! Pair classifier, loss composition, the training loop and
//! cross-validation.

mod crossval;
mod model;
mod trainer;

pub use crossval::{crossval, stratified_folds, CrossValReport, FoldResult};
pub use model::{
    bce_grad, bce_loss, build_params, classify_hidden, classify_pair, classify_pairs,
    init_classifier_params, pair_hidden, total_loss, TrainedModel, BCE_CLAMP, CLS_FC1, CLS_FC2,
};
pub use trainer::{
    featurize_all, fit, predict, represent_proteins, split_validation, train,
    train_node_embeddings, train_traced, EpochRecord, FeatureCache, TrainOutcome,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::AdamW;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairSample {
    pub id_a: String,
    pub id_b: String,
    pub label: u8,
}

impl PairSample {
    pub fn new(id_a: impl Into<String>, id_b: impl Into<String>, label: u8) -> Self {
        PairSample {
            id_a: id_a.into(),
            id_b: id_b.into(),
            label,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the contrastive term in the total loss.
    pub kappa: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Consecutive epochs without a validation-MCC improvement before stopping.
    pub patience: usize,
    /// Fraction of training pairs held out for early stopping.
    pub val_fraction: f64,
    pub folds: usize,
    pub seq_on: bool,
    pub graph_on: bool,
    pub cl_on: bool,
    pub optimizer: AdamW,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            kappa: 1.0,
            batch_size: 32,
            max_epochs: 30,
            patience: 5,
            val_fraction: 0.1,
            folds: 5,
            seq_on: true,
            graph_on: true,
            cl_on: true,
            optimizer: AdamW::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 0.0) {
            return Err(Error::Config(format!(
                "kappa must be nonnegative, got {}",
                self.kappa
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if self.patience < 1 || self.max_epochs < 1 {
            return Err(Error::Config(
                "patience and max_epochs must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "val_fraction must lie in [0, 1), got {}",
                self.val_fraction
            )));
        }
        if self.folds < 2 {
            return Err(Error::Config("folds must be at least 2".into()));
        }
        if !self.seq_on && !self.graph_on {
            return Err(Error::Config(
                "at least one of the sequence and graph branches must be enabled".into(),
            ));
        }
        self.optimizer.validate()
    }
}
