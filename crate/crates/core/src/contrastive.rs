//! SimCLR, SupCon and the cosine-filtered supervised contrastive loss.
//!
//! All three share one kernel: for anchor `i` with positive set `P(i)` and
//! kept set `K(i) ⊆ A(i)`,
//!
//! ```text
//! l_i = -(1/|P(i)|) Σ_{p∈P(i)} log( exp(z_i·z_p/τ) / Σ_{a∈K(i)} exp(z_i·z_a/τ) )
//! ```
//!
//! summed over anchors. SimCLR and SupCon keep every `a ≠ i`; the filtered
//! loss drops negatives whose cosine score with the anchor exceeds the
//! threshold. Positives are never dropped. Everything is evaluated in `f64`
//! with a fixed summation order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContrastMode {
    /// One projection per pair; positives share the interaction label.
    #[default]
    PairLabel,
    /// One projection per protein; positives are in-batch binding partners.
    ProteinAnchor,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastConfig {
    pub temperature: f64,
    pub neg_threshold: f64,
    pub eps: f64,
    pub mode: ContrastMode,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        ContrastConfig {
            temperature: 0.1,
            neg_threshold: 0.7,
            eps: 1e-8,
            mode: ContrastMode::PairLabel,
        }
    }
}

impl ContrastConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(-1.0..=1.0).contains(&self.neg_threshold) {
            return Err(Error::Config(format!(
                "neg_threshold must lie in [-1, 1], got {}",
                self.neg_threshold
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("contrast eps must be positive".into()));
        }
        Ok(())
    }
}

const UNIT_TOL: f64 = 1e-6;

/// Projections (rows of `z`) with, per anchor, the indices of its positives.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastBatch {
    z: Vec<f64>,
    dim: usize,
    labels: Option<Vec<u32>>,
    positives: Vec<Vec<usize>>,
    mode: ContrastMode,
}

fn flatten(rows: Vec<Vec<f64>>) -> Result<(Vec<f64>, usize)> {
    let dim = rows.first().map_or(0, Vec::len);
    if dim == 0 {
        return Err(Error::DegenerateBatch(
            "contrast batch needs nonempty rows".into(),
        ));
    }
    if let Some(r) = rows.iter().find(|r| r.len() != dim) {
        return Err(Error::Dimension(format!(
            "contrast rows of width {} and {dim}",
            r.len()
        )));
    }
    for (i, r) in rows.iter().enumerate() {
        let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::Contract(format!(
                "contrast row {i} has norm {n}, expected 1"
            )));
        }
    }
    Ok((rows.concat(), dim))
}

impl ContrastBatch {
    /// Supervised batch: the positives of `i` are all `p ≠ i` with the same
    /// label.
    pub fn with_labels(rows: Vec<Vec<f64>>, labels: Vec<u32>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} contrast rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let (z, dim) = flatten(rows)?;
        let positives = (0..labels.len())
            .map(|i| {
                (0..labels.len())
                    .filter(|&p| p != i && labels[p] == labels[i])
                    .collect()
            })
            .collect();
        Ok(ContrastBatch {
            z,
            dim,
            labels: Some(labels),
            positives,
            mode: ContrastMode::PairLabel,
        })
    }

    /// Pair-label batch with binary interaction labels.
    pub fn pair_labels(rows: Vec<Vec<f64>>, labels: &[u8]) -> Result<Self> {
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Input(format!("pair label {l} is not binary")));
        }
        Self::with_labels(rows, labels.iter().map(|&l| l as u32).collect())
    }

    /// Batch with explicit positive sets (protein-anchor mode). Self-indices
    /// and duplicates are removed from each set.
    pub fn with_positive_sets(rows: Vec<Vec<f64>>, positives: Vec<Vec<usize>>) -> Result<Self> {
        if rows.len() != positives.len() {
            return Err(Error::Dimension(format!(
                "{} contrast rows but {} positive sets",
                rows.len(),
                positives.len()
            )));
        }
        let m = rows.len();
        let (z, dim) = flatten(rows)?;
        let mut clean = Vec::with_capacity(m);
        for (i, mut set) in positives.into_iter().enumerate() {
            if let Some(&bad) = set.iter().find(|&&p| p >= m) {
                return Err(Error::Dimension(format!(
                    "positive index {bad} outside batch of {m}"
                )));
            }
            set.retain(|&p| p != i);
            set.sort_unstable();
            set.dedup();
            clean.push(set);
        }
        Ok(ContrastBatch {
            z,
            dim,
            labels: None,
            positives: clean,
            mode: ContrastMode::ProteinAnchor,
        })
    }

    /// SimCLR-style batch: each anchor's only positive is `pairing[i]`.
    pub fn with_pairing(rows: Vec<Vec<f64>>, pairing: &[usize]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::DegenerateBatch(format!(
                "SimCLR needs at least 2 rows, got {}",
                rows.len()
            )));
        }
        if pairing.iter().enumerate().any(|(i, &j)| j == i) {
            return Err(Error::Contract(
                "SimCLR pairing maps an anchor to itself".into(),
            ));
        }
        let mut b = Self::with_positive_sets(rows, pairing.iter().map(|&j| vec![j]).collect())?;
        b.mode = ContrastMode::PairLabel;
        Ok(b)
    }

    /// Same positive structure with different embeddings. Skips the
    /// unit-norm check so finite-difference probes can leave the sphere.
    pub fn with_embeddings(&self, z: Vec<f64>) -> Result<Self> {
        if z.len() != self.z.len() {
            return Err(Error::Dimension(format!(
                "replacement embeddings have {} values, batch has {}",
                z.len(),
                self.z.len()
            )));
        }
        Ok(ContrastBatch { z, ..self.clone() })
    }

    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> ContrastMode {
        self.mode
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.z[i * self.dim..(i + 1) * self.dim]
    }

    pub fn embeddings(&self) -> &[f64] {
        &self.z
    }

    pub fn positives(&self, i: usize) -> &[usize] {
        &self.positives[i]
    }
}

/// `Σ_j a_j b_j / (‖a‖·‖b‖ + eps)`.
pub fn cosine_score(a: &[f64], b: &[f64], eps: f64) -> f64 {
    assert_eq!(a.len(), b.len(), "cosine_score needs equal dimensions");
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb + eps)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FilterReport {
    /// Negatives removed from each anchor's denominator.
    pub discarded: Vec<usize>,
    /// Anchors without positives, left out of the loss.
    pub skipped_anchors: usize,
}

impl FilterReport {
    pub fn total_discarded(&self) -> usize {
        self.discarded.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContrastOutput {
    pub loss: f64,
    /// `d loss / d z`, row-major like the batch embeddings.
    pub grad: Vec<f64>,
    /// Per-anchor loss terms; `None` for skipped anchors.
    pub per_anchor: Vec<Option<f64>>,
    pub report: FilterReport,
}

fn contrast_kernel(
    batch: &ContrastBatch,
    temperature: f64,
    filter: Option<(f64, f64)>,
) -> Result<ContrastOutput> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let m = batch.len();
    let d = batch.dim;
    let mut grad = vec![0.0; m * d];
    let mut per_anchor = vec![None; m];
    let mut report = FilterReport {
        discarded: vec![0; m],
        skipped_anchors: 0,
    };
    let mut total = 0.0;
    let mut in_pos = vec![false; m];
    let mut coef = vec![0.0; m];

    for i in 0..m {
        let pos = batch.positives(i);
        if pos.is_empty() {
            report.skipped_anchors += 1;
            continue;
        }
        in_pos.iter_mut().for_each(|x| *x = false);
        for &p in pos {
            in_pos[p] = true;
        }
        let zi = batch.row(i);
        let mut kept: Vec<(usize, f64)> = Vec::with_capacity(m - 1);
        for a in (0..m).filter(|&a| a != i) {
            let za = batch.row(a);
            if !in_pos[a] {
                if let Some((threshold, eps)) = filter {
                    if cosine_score(zi, za, eps) > threshold {
                        report.discarded[i] += 1;
                        continue;
                    }
                }
            }
            let s: f64 = zi.iter().zip(za).map(|(x, y)| x * y).sum();
            kept.push((a, s / temperature));
        }
        let max = kept.iter().map(|k| k.1).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = kept.iter().map(|k| (k.1 - max).exp()).sum();
        let lse = max + denom.ln();
        let inv_p = 1.0 / pos.len() as f64;
        let mut li = lse;
        coef.iter_mut().for_each(|c| *c = 0.0);
        for &(a, logit) in &kept {
            coef[a] = ((logit - lse).exp()) / temperature;
            if in_pos[a] {
                li -= inv_p * logit;
                coef[a] -= inv_p / temperature;
            }
        }
        per_anchor[i] = Some(li);
        total += li;
        for &(a, _) in &kept {
            let c = coef[a];
            let za = batch.row(a);
            for t in 0..d {
                grad[i * d + t] += c * za[t];
                grad[a * d + t] += c * zi[t];
            }
        }
    }
    if report.skipped_anchors == m {
        return Err(Error::DegenerateBatch(format!(
            "all {m} anchors have empty positive sets"
        )));
    }
    Ok(ContrastOutput {
        loss: total,
        grad,
        per_anchor,
        report,
    })
}

/// SimCLR loss over a batch built with [`ContrastBatch::with_pairing`].
pub fn simclr_loss(batch: &ContrastBatch, temperature: f64) -> Result<ContrastOutput> {
    if batch.len() < 2 {
        return Err(Error::DegenerateBatch(format!(
            "SimCLR needs at least 2 rows, got {}",
            batch.len()
        )));
    }
    if (0..batch.len()).any(|i| batch.positives(i).len() != 1) {
        return Err(Error::Contract(
            "SimCLR needs exactly one positive per anchor".into(),
        ));
    }
    contrast_kernel(batch, temperature, None)
}

/// Supervised contrastive loss; every non-anchor sample is in the
/// denominator.
pub fn supcon_loss(batch: &ContrastBatch, temperature: f64) -> Result<ContrastOutput> {
    contrast_kernel(batch, temperature, None)
}

/// Supervised contrastive loss whose denominators drop negatives with
/// `cosine_score > neg_threshold`.
pub fn psup_loss(
    batch: &ContrastBatch,
    temperature: f64,
    neg_threshold: f64,
    eps: f64,
) -> Result<ContrastOutput> {
    contrast_kernel(batch, temperature, Some((neg_threshold, eps)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_rows(m: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m)
            .map(|_| {
                let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / n).collect()
            })
            .collect()
    }

    #[test]
    fn cosine_cases() {
        let a = [0.6, 0.8];
        assert!((cosine_score(&a, &a, 1e-8) - 1.0).abs() < 1e-7);
        assert_eq!(cosine_score(&[1.0, 0.0], &[0.0, 1.0], 1e-8), 0.0);
        assert!((cosine_score(&a, &[-0.6, -0.8], 1e-8) + 1.0).abs() < 1e-7);
        assert_eq!(cosine_score(&[0.0, 0.0], &a, 1e-8), 0.0);
    }

    #[test]
    fn simclr_two_identical_rows() {
        let b = ContrastBatch::with_pairing(vec![vec![1.0, 0.0], vec![1.0, 0.0]], &[1, 0]).unwrap();
        assert_eq!(simclr_loss(&b, 0.5).unwrap().loss, 0.0);
    }

    #[test]
    fn simclr_equal_dots_ignore_temperature() {
        // three rows at 120° plus a copy: not all equal; use a regular simplex instead
        let s = 1.0 / 3f64.sqrt();
        let rows = vec![
            vec![s, s, s],
            vec![s, -s, -s],
            vec![-s, s, -s],
            vec![-s, -s, s],
        ];
        let b = ContrastBatch::with_pairing(rows, &[1, 0, 3, 2]).unwrap();
        let l1 = simclr_loss(&b, 0.5).unwrap().loss;
        let l2 = simclr_loss(&b, 1.0).unwrap().loss;
        assert!((l1 - l2).abs() < 1e-12);
        assert!((l1 - 4.0 * 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn simclr_rejects_single_row() {
        assert!(matches!(
            ContrastBatch::with_pairing(vec![vec![1.0]], &[0]),
            Err(Error::DegenerateBatch(_))
        ));
    }

    #[test]
    fn identical_anchors_identical_terms() {
        let mut rows = unit_rows(5, 4, 2);
        rows[3] = rows[1].clone();
        let b = ContrastBatch::with_labels(rows, vec![0, 1, 0, 1, 1]).unwrap();
        let out = supcon_loss(&b, 0.3).unwrap();
        assert!((out.per_anchor[1].unwrap() - out.per_anchor[3].unwrap()).abs() < 1e-12);
    }

    #[test]
    fn skipped_and_degenerate_anchors() {
        let b = ContrastBatch::with_labels(unit_rows(3, 3, 1), vec![0, 0, 1]).unwrap();
        let out = supcon_loss(&b, 0.2).unwrap();
        assert_eq!(out.report.skipped_anchors, 1);
        assert!(out.per_anchor[2].is_none());

        let b = ContrastBatch::with_labels(unit_rows(3, 3, 1), vec![0, 1, 2]).unwrap();
        assert!(matches!(
            supcon_loss(&b, 0.2),
            Err(Error::DegenerateBatch(_))
        ));
    }

    #[test]
    fn rejects_non_unit_rows() {
        assert!(matches!(
            ContrastBatch::with_labels(vec![vec![2.0, 0.0], vec![1.0, 0.0]], vec![0, 0]),
            Err(Error::Contract(_))
        ));
        assert!(ContrastBatch::pair_labels(unit_rows(2, 2, 0), &[0, 2]).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..3 {
            let b =
                ContrastBatch::with_labels(unit_rows(6, 5, seed), vec![1, 1, 1, 0, 0, 0]).unwrap();
            let f = |z: &[f64]| {
                let out =
                    psup_loss(&b.with_embeddings(z.to_vec()).unwrap(), 0.5, 0.3, 1e-8).unwrap();
                (out.loss, out.grad)
            };
            assert!(grad_check(f, b.embeddings(), 1e-6) < 1e-4);
        }
    }
}
