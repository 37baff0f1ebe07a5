//! Sequence featurization: amino-acid composition, dipeptide composition,
//! and the embedding-weighted k-spaced amino-acid pair tensor.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Canonical residue order used by every feature vector.
pub const ALPHABET: &[u8; 20] = b"ACDEFGHIKLMNPQRSTVWY";
pub const NUM_RESIDUES: usize = 20;

const NO_RESIDUE: u8 = u8::MAX;

const RESIDUE_INDEX: [u8; 256] = {
    let mut table = [NO_RESIDUE; 256];
    let mut i = 0;
    while i < ALPHABET.len() {
        table[ALPHABET[i] as usize] = i as u8;
        i += 1;
    }
    table
};

#[inline]
pub fn residue_index(letter: u8) -> Option<usize> {
    match RESIDUE_INDEX[letter as usize] {
        NO_RESIDUE => None,
        i => Some(i as usize),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProteinSequence {
    id: String,
    residues: String,
}

impl ProteinSequence {
    /// Validates `residues` against the 20-letter alphabet after
    /// uppercasing. With `sanitize`, non-canonical letters are dropped
    /// instead of rejected.
    pub fn new(id: impl Into<String>, residues: &str, sanitize: bool) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::Input("protein id must be nonempty".into()));
        }
        let mut clean = String::with_capacity(residues.len());
        for (pos, ch) in residues.chars().enumerate() {
            let up = ch.to_ascii_uppercase();
            if up.is_ascii() && residue_index(up as u8).is_some() {
                clean.push(up);
            } else if !sanitize {
                return Err(Error::Input(format!(
                    "protein {id}: invalid residue {ch:?} at position {}",
                    pos + 1
                )));
            }
        }
        if clean.is_empty() {
            return Err(Error::Input(format!("protein {id}: empty sequence")));
        }
        Ok(ProteinSequence {
            id,
            residues: clean,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn residues(&self) -> &str {
        &self.residues
    }

    pub fn len(&self) -> usize {
        self.residues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residues.is_empty()
    }

    /// Residue indices into [`ALPHABET`].
    pub fn indices(&self) -> Vec<usize> {
        self.residues
            .bytes()
            .map(|b| residue_index(b).expect("validated at construction"))
            .collect()
    }
}

/// Per-residue embedding rows for one protein, `L × D`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidueEmbeddingMatrix {
    pub id: String,
    pub rows: usize,
    pub dim: usize,
    pub values: Vec<f32>,
}

impl ResidueEmbeddingMatrix {
    pub fn new(id: impl Into<String>, rows: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        let id = id.into();
        if dim == 0 {
            return Err(Error::Input(format!(
                "embedding for {id}: dimension must be positive"
            )));
        }
        if values.len() != rows * dim {
            return Err(Error::Input(format!(
                "embedding for {id}: {} values for {rows}×{dim}",
                values.len()
            )));
        }
        Ok(ResidueEmbeddingMatrix {
            id,
            rows,
            dim,
            values,
        })
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

pub fn featurize_aac(seq: &ProteinSequence) -> Result<Vec<f64>> {
    if seq.is_empty() {
        return Err(Error::Input(format!(
            "protein {}: empty sequence",
            seq.id()
        )));
    }
    let mut counts = vec![0usize; NUM_RESIDUES];
    for r in seq.indices() {
        counts[r] += 1;
    }
    let l = seq.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / l).collect())
}

/// Adjacent-pair frequencies; the entry for `(a, b)` sits at `20·a + b`.
pub fn featurize_dpc(seq: &ProteinSequence) -> Result<Vec<f64>> {
    if seq.len() < 2 {
        return Err(Error::Input(format!(
            "protein {}: dipeptide composition needs length >= 2, got {}",
            seq.id(),
            seq.len()
        )));
    }
    let idx = seq.indices();
    let mut counts = vec![0usize; NUM_RESIDUES * NUM_RESIDUES];
    for w in idx.windows(2) {
        counts[w[0] * NUM_RESIDUES + w[1]] += 1;
    }
    let n = (seq.len() - 1) as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// Embedding-weighted k-spaced pair tensor of shape `[(k+1)·D, 20, 20]`.
///
/// For gap `g` and residue types `(a, b)`, the `D` channels `g·D..(g+1)·D`
/// hold the mean of `(ae_i + ae_j) / 2` over all positions with
/// `s_i = a`, `s_j = b`, `j = i + g + 1`, or zeros when there are none.
pub fn cksaap_embed(
    seq: &ProteinSequence,
    emb: &ResidueEmbeddingMatrix,
    k: usize,
) -> Result<Tensor<f32>> {
    if emb.rows != seq.len() {
        return Err(Error::Input(format!(
            "protein {}: embedding has {} rows but sequence length is {}",
            seq.id(),
            emb.rows,
            seq.len()
        )));
    }
    let d = emb.dim;
    let idx = seq.indices();
    let cells = NUM_RESIDUES * NUM_RESIDUES;
    let mut out = vec![0.0f32; (k + 1) * d * cells];
    let mut sums = vec![0.0f64; cells * d];
    let mut counts = vec![0usize; cells];
    for g in 0..=k {
        sums.iter_mut().for_each(|s| *s = 0.0);
        counts.iter_mut().for_each(|c| *c = 0);
        for i in 0..idx.len().saturating_sub(g + 1) {
            let j = i + g + 1;
            let cell = idx[i] * NUM_RESIDUES + idx[j];
            counts[cell] += 1;
            let acc = &mut sums[cell * d..(cell + 1) * d];
            for ((s, &x), &y) in acc.iter_mut().zip(emb.row(i)).zip(emb.row(j)) {
                *s += (x as f64 + y as f64) * 0.5;
            }
        }
        for cell in 0..cells {
            if counts[cell] == 0 {
                continue;
            }
            let n = counts[cell] as f64;
            for c in 0..d {
                out[(g * d + c) * cells + cell] = (sums[cell * d + c] / n) as f32;
            }
        }
    }
    Tensor::new(vec![(k + 1) * d, NUM_RESIDUES, NUM_RESIDUES], out)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Deterministic stand-in for a protein language model: row `i` is a unit
/// vector drawn from a generator keyed by the residue letter, `i mod 8`
/// and `seed`.
pub fn toy_residue_embedder(
    seq: &ProteinSequence,
    dim: usize,
    seed: u64,
) -> ResidueEmbeddingMatrix {
    assert!(dim >= 1, "embedding dimension must be positive");
    let mut cache: BTreeMap<(u8, usize), Vec<f32>> = BTreeMap::new();
    let mut values = Vec::with_capacity(seq.len() * dim);
    for (i, letter) in seq.residues().bytes().enumerate() {
        let key = (letter, i % 8);
        let row = cache.entry(key).or_insert_with(|| {
            let s = splitmix64(splitmix64(seed) ^ ((letter as u64) << 8 | key.1 as u64));
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| (x / norm) as f32).collect()
        });
        values.extend_from_slice(row);
    }
    ResidueEmbeddingMatrix {
        id: seq.id().to_string(),
        rows: seq.len(),
        dim,
        values,
    }
}

/// Reads a REMB file into a map keyed by protein id.
pub fn load_residue_embeddings(path: &Path) -> Result<BTreeMap<String, ResidueEmbeddingMatrix>> {
    crate::io::remb::read_remb(path)
}

/// Where residue embeddings come from.
#[derive(Clone, Debug)]
pub enum EmbeddingSource {
    Toy { dim: usize, seed: u64 },
    Precomputed(BTreeMap<String, ResidueEmbeddingMatrix>),
}

impl EmbeddingSource {
    pub fn embed(&self, seq: &ProteinSequence) -> Result<ResidueEmbeddingMatrix> {
        match self {
            EmbeddingSource::Toy { dim, seed } => Ok(toy_residue_embedder(seq, *dim, *seed)),
            EmbeddingSource::Precomputed(map) => map.get(seq.id()).cloned().ok_or_else(|| {
                Error::Data(format!("no residue embedding for protein {}", seq.id()))
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeqFeatureBundle {
    pub aac: Vec<f32>,
    pub dpc: Vec<f32>,
    pub cksaap: Tensor<f32>,
    pub k: usize,
}

impl SeqFeatureBundle {
    pub fn compute(seq: &ProteinSequence, emb: &ResidueEmbeddingMatrix, k: usize) -> Result<Self> {
        let to32 = |v: Vec<f64>| v.into_iter().map(|x| x as f32).collect();
        Ok(SeqFeatureBundle {
            aac: to32(featurize_aac(seq)?),
            dpc: to32(featurize_dpc(seq)?),
            cksaap: cksaap_embed(seq, emb, k)?,
            k,
        })
    }

    /// All-zero bundle of the given geometry.
    pub fn zeros(k: usize, dim: usize) -> Self {
        SeqFeatureBundle {
            aac: vec![0.0; NUM_RESIDUES],
            dpc: vec![0.0; NUM_RESIDUES * NUM_RESIDUES],
            cksaap: Tensor::zeros(&[(k + 1) * dim, NUM_RESIDUES, NUM_RESIDUES]),
            k,
        }
    }

    pub fn channels(&self) -> usize {
        self.cksaap.shape()[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(s: &str) -> ProteinSequence {
        ProteinSequence::new("p", s, false).unwrap()
    }

    fn at(letter: u8) -> usize {
        residue_index(letter).unwrap()
    }

    #[test]
    fn aac_examples() {
        let v = featurize_aac(&seq("AAG")).unwrap();
        assert!((v[at(b'A')] - 2.0 / 3.0).abs() < 1e-12);
        assert!((v[at(b'G')] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(v.iter().filter(|&&x| x > 0.0).count(), 2);

        let m = featurize_aac(&seq("M")).unwrap();
        assert_eq!(m[at(b'M')], 1.0);
        assert_eq!(m.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn dpc_examples() {
        let v = featurize_dpc(&seq("AAG")).unwrap();
        assert_eq!(v[at(b'A') * 20 + at(b'A')], 0.5);
        assert_eq!(v[at(b'A') * 20 + at(b'G')], 0.5);

        let v = featurize_dpc(&seq("ACACAC")).unwrap();
        assert!((v[at(b'A') * 20 + at(b'C')] - 0.6).abs() < 1e-12);
        assert!((v[at(b'C') * 20 + at(b'A')] - 0.4).abs() < 1e-12);

        let v = featurize_dpc(&seq("AAAA")).unwrap();
        assert_eq!(v[at(b'A') * 20 + at(b'A')], 1.0);
    }

    #[test]
    fn dpc_rejects_single_residue() {
        assert!(matches!(featurize_dpc(&seq("M")), Err(Error::Input(_))));
    }

    #[test]
    fn nonstandard_residues() {
        assert!(ProteinSequence::new("x", "ACXD", false).is_err());
        let s = ProteinSequence::new("x", "acXdB", true).unwrap();
        assert_eq!(s.residues(), "ACD");
        assert!(ProteinSequence::new("x", "XXX", true).is_err());
        assert!(ProteinSequence::new("", "A", false).is_err());
    }

    #[test]
    fn cksaap_two_residue_example() {
        let s = seq("AA");
        let emb = ResidueEmbeddingMatrix::new("p", 2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let t = cksaap_embed(&s, &emb, 0).unwrap();
        assert_eq!(t.shape(), &[2, 20, 20]);
        let cell = at(b'A') * 20 + at(b'A');
        assert_eq!(t.data()[cell], 0.5);
        assert_eq!(t.data()[400 + cell], 0.5);
        assert_eq!(t.data().iter().filter(|&&x| x != 0.0).count(), 2);
    }

    #[test]
    fn cksaap_paper_shape() {
        let s = seq("MKTAYIAKQR");
        let emb = toy_residue_embedder(&s, 960, 1);
        let t = cksaap_embed(&s, &emb, 3).unwrap();
        assert_eq!(t.shape(), &[3840, 20, 20]);
    }

    #[test]
    fn cksaap_identical_embeddings() {
        let s = seq("ACDAC");
        let e = [0.25f32, -1.0, 2.0];
        let emb = ResidueEmbeddingMatrix::new("p", 5, 3, e.repeat(5)).unwrap();
        let t = cksaap_embed(&s, &emb, 2).unwrap();
        for g in 0..3 {
            for cell in 0..400 {
                let v: Vec<f32> = (0..3).map(|c| t.data()[(g * 3 + c) * 400 + cell]).collect();
                assert!(v.iter().all(|&x| x == 0.0) || v == e);
            }
        }
    }

    #[test]
    fn cksaap_length_mismatch() {
        let s = seq("ACD");
        let emb = ResidueEmbeddingMatrix::new("p", 2, 1, vec![0.0, 0.0]).unwrap();
        assert!(matches!(cksaap_embed(&s, &emb, 1), Err(Error::Input(_))));
    }

    #[test]
    fn toy_embedder_contract() {
        let a = seq("MKTAYIAKQRQISFVKSHFSRQ");
        let b = seq("MKTAYIAKQRWWWW");
        let ea = toy_residue_embedder(&a, 16, 9);
        assert_eq!(ea, toy_residue_embedder(&a, 16, 9));
        for i in 0..a.len() {
            let n: f64 = ea
                .row(i)
                .iter()
                .map(|&x| (x as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
        let eb = toy_residue_embedder(&b, 16, 9);
        assert_eq!(&ea.values[..10 * 16], &eb.values[..10 * 16]);
        assert_ne!(ea.values, toy_residue_embedder(&a, 16, 10).values);
    }
}
