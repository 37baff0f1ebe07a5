use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::config::{derive_seed, Config};
use crate::encoder::{dense_layer, init_encoder_params};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

pub const CLS_FC1: &str = "classifier.fc1";
pub const CLS_FC2: &str = "classifier.fc2";

/// Predictions are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` inside the loss.
pub const BCE_CLAMP: f64 = 1e-7;

pub fn init_classifier_params<T: Scalar, R: Rng>(
    store: &mut ParamStore<T>,
    fusion_dim: usize,
    rng: &mut R,
) {
    let n_in = 2 * fusion_dim;
    store.insert(
        format!("{CLS_FC1}.weight"),
        crate::params::he_uniform(&[fusion_dim, n_in], n_in, rng),
        true,
    );
    store.insert(
        format!("{CLS_FC1}.bias"),
        Tensor::zeros(&[fusion_dim]),
        true,
    );
    store.insert(
        format!("{CLS_FC2}.weight"),
        crate::params::he_uniform(&[1, fusion_dim], fusion_dim, rng),
        true,
    );
    store.insert(format!("{CLS_FC2}.bias"), Tensor::zeros(&[1]), true);
}

/// Fresh parameters for every module, seeded from `config.seed`.
pub fn build_params(config: &Config) -> Result<ParamStore<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1));
    let mut store = ParamStore::new();
    init_encoder_params(&mut store, &config.encoder, &mut rng)?;
    init_classifier_params(&mut store, config.encoder.fusion_dim, &mut rng);
    Ok(store)
}

/// `[F_i ‖ F_j]` rows → dense → ReLU → dense → sigmoid. Input `[n, 2F]`,
/// output `[n, 1]`.
pub fn classify_pairs<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    joined: Var,
) -> Result<Var> {
    let h = pair_hidden(tape, store, joined)?;
    classify_hidden(tape, store, h)
}

/// Hidden layer of the classifier: the fused pair embedding, `[n, F]`.
pub fn pair_hidden<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    joined: Var,
) -> Result<Var> {
    dense_layer(tape, store, CLS_FC1, joined, true)
}

/// Output layer of the classifier applied to [`pair_hidden`] rows.
pub fn classify_hidden<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    h: Var,
) -> Result<Var> {
    let logit = dense_layer(tape, store, CLS_FC2, h, false)?;
    Ok(tape.sigmoid(logit))
}

/// Interaction probability for one pair of representations.
pub fn classify_pair<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    fi: Var,
    fj: Var,
) -> Result<Var> {
    let (a, b) = (
        tape.value(fi).shape().to_vec(),
        tape.value(fj).shape().to_vec(),
    );
    if a != b || a.len() != 1 {
        return Err(Error::Dimension(format!(
            "classify_pair: representations {a:?} and {b:?}"
        )));
    }
    let joined = tape.concat(&[fi, fj])?;
    classify_pairs(tape, store, joined)
}

fn check_bce(preds: &[f64], labels: &[u8]) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} predictions but {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Input(format!("label {l} is not binary")));
    }
    Ok(())
}

/// Summed binary cross-entropy over the batch.
pub fn bce_loss(preds: &[f64], labels: &[u8]) -> Result<f64> {
    check_bce(preds, labels)?;
    Ok(preds
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum())
}

/// `d bce / d pred`; zero where the clamp is active.
pub fn bce_grad(preds: &[f64], labels: &[u8]) -> Vec<f64> {
    preds
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p) {
                0.0
            } else if y == 1 {
                -1.0 / p
            } else {
                1.0 / (1.0 - p)
            }
        })
        .collect()
}

/// Records the summed BCE of `preds` (any shape, one entry per sample).
pub(crate) fn bce_on_tape<T: Scalar>(tape: &mut Tape<T>, preds: Var, labels: &[u8]) -> Result<Var> {
    let p = tape.value(preds).to_f64_vec();
    let value = bce_loss(&p, labels)?;
    let grad = bce_grad(&p, labels).into_iter().map(T::from_f64).collect();
    tape.external(&[preds], value, vec![grad])
}

pub fn total_loss(bce: f64, psup: f64, kappa: f64) -> f64 {
    bce + kappa * psup
}

/// Learned parameters with the configuration that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub params: ParamStore<f32>,
    pub config: Config,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_mcc: f64,
}

impl TrainedModel {
    pub fn config_hash(&self) -> String {
        self.config.hash()
    }
}
