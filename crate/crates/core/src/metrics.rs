//! Binary-classification metrics: confusion counts, threshold metrics,
//! ROC AUC and average precision.

use crate::error::{Error, Result};

/// Scores at or above this value are predicted positive.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn check_lengths(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Input(format!("label {l} is not binary")));
    }
    Ok(())
}

pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionCounts> {
    check_lengths(scores, labels)?;
    let mut c = ConfusionCounts::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BasicMetrics {
    pub acc: f64,
    pub pre: f64,
    pub sen: f64,
    pub spe: f64,
    pub f1: f64,
    pub mcc: f64,
    /// Set when any metric hit a zero denominator and was reported as 0.
    pub degenerate: bool,
}

pub fn basic_metrics(c: &ConfusionCounts) -> BasicMetrics {
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let mut degenerate = false;
    let mut ratio = |num: f64, den: f64| {
        if den == 0.0 {
            degenerate = true;
            0.0
        } else {
            num / den
        }
    };
    let acc = ratio(tp + tn, tp + tn + fp + fn_);
    let pre = ratio(tp, tp + fp);
    let sen = ratio(tp, tp + fn_);
    let spe = ratio(tn, tn + fp);
    let f1 = ratio(2.0 * pre * sen, pre + sen);
    let root = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    let mcc = ratio(tp * tn - fp * fn_, root);
    BasicMetrics {
        acc,
        pre,
        sen,
        spe,
        f1,
        mcc,
        degenerate,
    }
}

fn class_counts(labels: &[u8]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&l| l == 1).count();
    (pos, labels.len() - pos)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from average ranks in `O(n log n)`.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let (p, n) = class_counts(labels);
    if p == 0 || n == 0 {
        return Err(Error::UndefinedMetric(
            "ROC AUC needs at least one positive and one negative".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; tied block shares the mean rank
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        pos_rank_sum += mean_rank * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (p as f64, n as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision: mean over positives of the precision at the cutoff
/// that first includes that positive, ranking by descending score. Equal
/// scores keep their input order.
pub fn auprc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let (p, _) = class_counts(labels);
    if p == 0 {
        return Err(Error::UndefinedMetric(
            "average precision needs at least one positive".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &k) in order.iter().enumerate() {
        if labels[k] == 1 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / p as f64)
}

/// The eight reported metrics, in report column order.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub acc: f64,
    pub pre: f64,
    pub sen: f64,
    pub spe: f64,
    pub f1: f64,
    pub mcc: f64,
    pub auc: f64,
    pub auprc: f64,
}

impl MetricReport {
    pub const COLUMNS: [&'static str; 8] =
        ["acc", "pre", "sen", "spe", "f1", "mcc", "auc", "auprc"];

    pub fn values(&self) -> [f64; 8] {
        [
            self.acc, self.pre, self.sen, self.spe, self.f1, self.mcc, self.auc, self.auprc,
        ]
    }

    pub fn from_values(v: [f64; 8]) -> Self {
        MetricReport {
            acc: v[0],
            pre: v[1],
            sen: v[2],
            spe: v[3],
            f1: v[4],
            mcc: v[5],
            auc: v[6],
            auprc: v[7],
        }
    }
}

/// All eight metrics at [`DEFAULT_THRESHOLD`]. Rank metrics that are
/// undefined for a single-class input are reported as 0.
pub fn evaluate(scores: &[f64], labels: &[u8]) -> Result<MetricReport> {
    let b = basic_metrics(&confusion(scores, labels, DEFAULT_THRESHOLD)?);
    let undefined_as_zero = |r: Result<f64>| match r {
        Ok(v) => Ok(v),
        Err(Error::UndefinedMetric(_)) => Ok(0.0),
        Err(e) => Err(e),
    };
    Ok(MetricReport {
        acc: b.acc,
        pre: b.pre,
        sen: b.sen,
        spe: b.spe,
        f1: b.f1,
        mcc: b.mcc,
        auc: undefined_as_zero(roc_auc(scores, labels))?,
        auprc: undefined_as_zero(auprc(scores, labels))?,
    })
}
