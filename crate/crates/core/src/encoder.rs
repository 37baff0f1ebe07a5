//! Multimodal protein encoder: convolutional branch over the k-spaced pair
//! tensor, composition features, graph embedding fusion and the projection
//! head used by the contrastive losses.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::features::{SeqFeatureBundle, NUM_RESIDUES};
use crate::params::{he_uniform, ParamStore};
use crate::tensor::{Scalar, Tensor};

pub const CONV1: &str = "encoder.conv1.kernel";
pub const CONV2: &str = "encoder.conv2.kernel";
pub const CONV_FC: &str = "encoder.conv_fc";
pub const SEQ_FC: &str = "encoder.seq_fc";
pub const FUSION_FC: &str = "fusion.fc";
pub const PROJ_FC1: &str = "projector.fc1";
pub const PROJ_FC2: &str = "projector.fc2";

/// Guard for the projection normalization.
pub const NORM_EPS: f64 = 1e-8;

const COMPOSITION_DIM: usize = NUM_RESIDUES + NUM_RESIDUES * NUM_RESIDUES;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Largest residue gap of the pair tensor.
    pub k: usize,
    /// Residue embedding width `D`.
    pub embed_dim: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub pool: usize,
    pub seq_dim: usize,
    pub fusion_dim: usize,
    pub proj_dim: usize,
    pub graph_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            k: 3,
            embed_dim: 960,
            conv1_channels: 16,
            conv2_channels: 32,
            kernel: 3,
            stride: 1,
            padding: 1,
            pool: 2,
            seq_dim: 256,
            fusion_dim: 256,
            proj_dim: 128,
            graph_dim: 64,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("embed_dim", self.embed_dim),
            ("conv1_channels", self.conv1_channels),
            ("conv2_channels", self.conv2_channels),
            ("kernel", self.kernel),
            ("stride", self.stride),
            ("pool", self.pool),
            ("seq_dim", self.seq_dim),
            ("fusion_dim", self.fusion_dim),
            ("proj_dim", self.proj_dim),
            ("graph_dim", self.graph_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("encoder.{name} must be positive")));
        }
        if self.proj_dim > self.fusion_dim {
            return Err(Error::Config(format!(
                "proj_dim {} exceeds fusion_dim {}",
                self.proj_dim, self.fusion_dim
            )));
        }
        self.conv_out_side()?;
        Ok(())
    }

    pub fn input_channels(&self) -> usize {
        (self.k + 1) * self.embed_dim
    }

    fn conv_out_side(&self) -> Result<usize> {
        let padded = NUM_RESIDUES + 2 * self.padding;
        if self.kernel > padded {
            return Err(Error::Config(format!(
                "conv kernel {} exceeds padded input side {padded}",
                self.kernel
            )));
        }
        let once = (padded - self.kernel) / self.stride + 1;
        let padded = once + 2 * self.padding;
        if self.kernel > padded {
            return Err(Error::Config("second conv kernel exceeds its input".into()));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }

    /// Length of the flattened pooled feature map.
    pub fn flat_dim(&self) -> usize {
        let side = self
            .conv_out_side()
            .expect("validated config")
            .div_ceil(self.pool);
        self.conv2_channels * side * side
    }
}

fn dense_params<T: Scalar, R: Rng>(
    store: &mut ParamStore<T>,
    name: &str,
    n_out: usize,
    n_in: usize,
    rng: &mut R,
) {
    store.insert(
        format!("{name}.weight"),
        he_uniform(&[n_out, n_in], n_in, rng),
        true,
    );
    store.insert(format!("{name}.bias"), Tensor::zeros(&[n_out]), true);
}

/// Adds encoder, fusion and projector parameters to `store`.
pub fn init_encoder_params<T: Scalar, R: Rng>(
    store: &mut ParamStore<T>,
    cfg: &EncoderConfig,
    rng: &mut R,
) -> Result<()> {
    cfg.validate()?;
    let (c0, c1, c2, kk) = (
        cfg.input_channels(),
        cfg.conv1_channels,
        cfg.conv2_channels,
        cfg.kernel,
    );
    store.insert(
        CONV1,
        he_uniform(&[c1, c0, kk, kk], c0 * kk * kk, rng),
        true,
    );
    store.insert(
        CONV2,
        he_uniform(&[c2, c1, kk, kk], c1 * kk * kk, rng),
        true,
    );
    dense_params(store, CONV_FC, cfg.seq_dim, cfg.flat_dim(), rng);
    dense_params(
        store,
        SEQ_FC,
        cfg.seq_dim,
        cfg.seq_dim + COMPOSITION_DIM,
        rng,
    );
    dense_params(
        store,
        FUSION_FC,
        cfg.fusion_dim,
        cfg.seq_dim + cfg.graph_dim,
        rng,
    );
    dense_params(store, PROJ_FC1, cfg.fusion_dim, cfg.fusion_dim, rng);
    dense_params(store, PROJ_FC2, cfg.proj_dim, cfg.fusion_dim, rng);
    Ok(())
}

/// `dense` followed by ReLU, reading `{name}.weight` / `{name}.bias`.
pub fn dense_layer<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    name: &str,
    x: Var,
    relu: bool,
) -> Result<Var> {
    let w = tape.param(store, &format!("{name}.weight"))?;
    let b = tape.param(store, &format!("{name}.bias"))?;
    let y = tape.dense(x, w, b)?;
    Ok(if relu { tape.relu(y) } else { y })
}

fn constant_f32<T: Scalar>(tape: &mut Tape<T>, shape: &[usize], data: &[f32]) -> Result<Var> {
    let t = Tensor::new(
        shape.to_vec(),
        data.iter().map(|&x| T::from_f64(x as f64)).collect(),
    )?;
    Ok(tape.constant(t))
}

/// conv → ReLU → conv → ReLU → max-pool → flatten → dense → ReLU, then
/// `[conv vector ‖ AAC ‖ DPC]` → dense → ReLU. Output has `seq_dim` entries.
pub fn encode_sequence<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    cfg: &EncoderConfig,
    bundle: &SeqFeatureBundle,
) -> Result<Var> {
    if bundle.channels() != cfg.input_channels() {
        return Err(Error::Config(format!(
            "feature bundle has {} channels, encoder expects (k+1)·D = {}",
            bundle.channels(),
            cfg.input_channels()
        )));
    }
    let x = constant_f32(tape, bundle.cksaap.shape(), bundle.cksaap.data())?;
    let k1 = tape.param(store, CONV1)?;
    let k2 = tape.param(store, CONV2)?;
    let h = tape.conv2d(x, k1, cfg.stride, cfg.padding)?;
    let h = tape.relu(h);
    let h = tape.conv2d(h, k2, cfg.stride, cfg.padding)?;
    let h = tape.relu(h);
    let h = tape.maxpool2d(h, cfg.pool)?;
    let flat = tape.reshape(h, &[cfg.flat_dim()])?;
    let conv_vec = dense_layer(tape, store, CONV_FC, flat, true)?;
    let aac = constant_f32(tape, &[bundle.aac.len()], &bundle.aac)?;
    let dpc = constant_f32(tape, &[bundle.dpc.len()], &bundle.dpc)?;
    let joined = tape.concat(&[conv_vec, aac, dpc])?;
    dense_layer(tape, store, SEQ_FC, joined, true)
}

/// ReLU dense layer over `[seq_vec ‖ node_vec]`, giving the protein
/// representation `F`.
pub fn fuse<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    cfg: &EncoderConfig,
    seq_vec: Var,
    node_vec: Var,
) -> Result<Var> {
    let (s, g) = (tape.value(seq_vec).shape(), tape.value(node_vec).shape());
    if s != [cfg.seq_dim] || g != [cfg.graph_dim] {
        return Err(Error::Dimension(format!(
            "fuse: got sequence {s:?} and graph {g:?}, expected [{}] and [{}]",
            cfg.seq_dim, cfg.graph_dim
        )));
    }
    let joined = tape.concat(&[seq_vec, node_vec])?;
    dense_layer(tape, store, FUSION_FC, joined, true)
}

/// dense → ReLU → dense → L2 normalization. Accepts one representation or a
/// batch stacked as rows.
pub fn project<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, f: Var) -> Result<Var> {
    let h = dense_layer(tape, store, PROJ_FC1, f, true)?;
    let z = dense_layer(tape, store, PROJ_FC2, h, false)?;
    Ok(tape.l2_normalize(z, T::from_f64(NORM_EPS)))
}

/// Constant graph-branch input for `node_vec`.
pub fn node_input<T: Scalar>(tape: &mut Tape<T>, node_vec: &[f32]) -> Result<Var> {
    constant_f32(tape, &[node_vec.len()], node_vec)
}

/// Constant zero sequence vector used when the sequence branch is disabled.
pub fn zero_sequence<T: Scalar>(tape: &mut Tape<T>, cfg: &EncoderConfig) -> Var {
    tape.constant(Tensor::zeros(&[cfg.seq_dim]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{toy_residue_embedder, ProteinSequence};
    use crate::gradcheck::check_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> EncoderConfig {
        EncoderConfig {
            k: 1,
            embed_dim: 2,
            conv1_channels: 2,
            conv2_channels: 2,
            seq_dim: 5,
            fusion_dim: 6,
            proj_dim: 4,
            graph_dim: 3,
            ..EncoderConfig::default()
        }
    }

    fn store(cfg: &EncoderConfig, seed: u64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        init_encoder_params(&mut s, cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        s
    }

    fn bundle(cfg: &EncoderConfig) -> SeqFeatureBundle {
        let seq = ProteinSequence::new("p", "MKWVTFISLLFLFSSAYSRGV", false).unwrap();
        let emb = toy_residue_embedder(&seq, cfg.embed_dim, 4);
        SeqFeatureBundle::compute(&seq, &emb, cfg.k).unwrap()
    }

    fn zero_biases(s: &mut ParamStore<f64>) {
        let names: Vec<String> = s
            .names()
            .filter(|n| n.ends_with(".bias"))
            .map(String::from)
            .collect();
        for n in names {
            let len = s.get(&n).unwrap().len();
            s.set(&n, vec![0.0; len]).unwrap();
        }
    }

    #[test]
    fn zero_bundle_gives_zero_output() {
        let cfg = small();
        let s = store(&cfg, 1);
        let mut tape = Tape::new();
        let v = encode_sequence(
            &mut tape,
            &s,
            &cfg,
            &SeqFeatureBundle::zeros(cfg.k, cfg.embed_dim),
        )
        .unwrap();
        assert!(tape.value(v).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn deterministic_output() {
        let cfg = small();
        let run = || {
            let s = store(&cfg, 2).cast::<f32>();
            let mut tape = Tape::<f32>::new();
            let v = encode_sequence(&mut tape, &s, &cfg, &bundle(&cfg)).unwrap();
            tape.value(v).clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn channel_mismatch_is_config_error() {
        let cfg = small();
        let s = store(&cfg, 1);
        let mut tape = Tape::new();
        let b = SeqFeatureBundle::zeros(cfg.k + 1, cfg.embed_dim);
        assert!(matches!(
            encode_sequence(&mut tape, &s, &cfg, &b),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn encode_gradients_match_finite_differences() {
        let cfg = small();
        let b = bundle(&cfg);
        let errs = check_params(&store(&cfg, 3), 1e-6, |s| {
            let mut tape = Tape::new();
            let v = encode_sequence(&mut tape, s, &cfg, &b)?;
            let loss = tape.mean(v);
            tape.backward(loss)?;
            Ok((tape.value(loss).item(), tape.param_grads()))
        })
        .unwrap();
        for (name, e) in errs {
            assert!(e < 1e-4, "{name}: {e}");
        }
    }

    #[test]
    fn fuse_zero_graph_branch() {
        let cfg = small();
        let mut s = store(&cfg, 5);
        let mut tape = Tape::new();
        let seq = tape.leaf(Tensor::vector(vec![0.3, -0.1, 0.8, 0.0, 1.2]));
        let node = tape.constant(Tensor::zeros(&[cfg.graph_dim]));
        let f = fuse(&mut tape, &s, &cfg, seq, node).unwrap();
        let loss = tape.sum(f);
        tape.backward(loss).unwrap();
        let before = tape.value(f).clone();

        // perturbing the graph-column weights changes nothing when node_vec = 0
        let w = s.get("fusion.fc.weight").unwrap().clone();
        let mut data = w.data().to_vec();
        for o in 0..cfg.fusion_dim {
            for i in cfg.seq_dim..cfg.seq_dim + cfg.graph_dim {
                data[o * (cfg.seq_dim + cfg.graph_dim) + i] += 0.5;
            }
        }
        s.set("fusion.fc.weight", data).unwrap();
        let mut tape2 = Tape::new();
        let seq = tape2.constant(Tensor::vector(vec![0.3, -0.1, 0.8, 0.0, 1.2]));
        let node = tape2.constant(Tensor::zeros(&[cfg.graph_dim]));
        let f2 = fuse(&mut tape2, &s, &cfg, seq, node).unwrap();
        assert_eq!(before.data(), tape2.value(f2).data());

        // and those columns receive zero gradient
        let g = &tape.param_grads()["fusion.fc.weight"];
        for o in 0..cfg.fusion_dim {
            for i in cfg.seq_dim..cfg.seq_dim + cfg.graph_dim {
                assert_eq!(g.data()[o * (cfg.seq_dim + cfg.graph_dim) + i], 0.0);
            }
        }
    }

    #[test]
    fn fuse_zero_inputs_zero_biases() {
        let cfg = small();
        let mut s = store(&cfg, 6);
        zero_biases(&mut s);
        let mut tape = Tape::new();
        let seq = tape.constant(Tensor::zeros(&[cfg.seq_dim]));
        let node = tape.constant(Tensor::zeros(&[cfg.graph_dim]));
        let f = fuse(&mut tape, &s, &cfg, seq, node).unwrap();
        assert!(tape.value(f).data().iter().all(|&x| x == 0.0));

        let bad = tape.constant(Tensor::zeros(&[cfg.graph_dim + 1]));
        assert!(matches!(
            fuse(&mut tape, &s, &cfg, seq, bad),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn fuse_and_project_gradients() {
        let cfg = small();
        let errs = check_params(&store(&cfg, 7), 1e-3, |s| {
            let mut tape = Tape::new();
            let seq = tape.constant(Tensor::vector(vec![0.5, 1.0, -0.3, 0.2, 0.9]));
            let node = tape.constant(Tensor::vector(vec![0.1, -0.7, 0.4]));
            let f = fuse(&mut tape, s, &cfg, seq, node)?;
            let z = project(&mut tape, s, f)?;
            let target = tape.constant(Tensor::vector(vec![0.3, -0.2, 0.5, 0.1]));
            let prod = tape.mul(z, target)?;
            let loss = tape.sum(prod);
            tape.backward(loss)?;
            Ok((tape.value(loss).item(), tape.param_grads()))
        })
        .unwrap();
        for (name, e) in errs {
            if name.starts_with("fusion") || name.starts_with("projector") {
                assert!(e < 1e-4, "{name}: {e}");
            }
        }
    }

    #[test]
    fn projection_is_unit_norm_and_scale_invariant() {
        let cfg = small();
        let mut s = store(&cfg, 8);
        zero_biases(&mut s);
        // nonnegative first-layer weights keep positive inputs in the ReLU's linear region
        let w1 = s
            .get("projector.fc1.weight")
            .unwrap()
            .data()
            .iter()
            .map(|x| x.abs())
            .collect();
        s.set("projector.fc1.weight", w1).unwrap();
        let f = [0.2, 0.4, 1.0, 0.3, 0.7, 0.05];
        let z_of = |scale: f64| {
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::vector(f.iter().map(|v| v * scale).collect()));
            let z = project(&mut tape, &s, x).unwrap();
            tape.value(z).data().to_vec()
        };
        let (z1, z2) = (z_of(1.0), z_of(2.0));
        let n: f64 = z1.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
        for (a, b) in z1.iter().zip(&z2) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
