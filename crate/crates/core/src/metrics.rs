//! Stratified splitting and the evaluation suite: confusion-matrix rates,
//! rank-based AUC and its percentile-bootstrap interval.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split of all patients.
pub fn stratified_split(labels: &[u8], test_fraction: f64, seed: u64) -> Result<Split> {
    let all: Vec<usize> = (0..labels.len()).collect();
    stratified_split_subset(&all, labels, test_fraction, seed)
}

/// Stratified split of `indices` (patient ids into `labels`). Each class
/// contributes `round(count * test_fraction)` members to the test side.
/// Both outputs are sorted.
pub fn stratified_split_subset(
    indices: &[usize],
    labels: &[u8],
    test_fraction: f64,
    seed: u64,
) -> Result<Split> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(indices.len());
    let mut test = Vec::new();
    for class in [0u8, 1u8] {
        let mut members: Vec<usize> = indices
            .iter()
            .copied()
            .filter(|&i| labels[i] == class)
            .collect();
        if members.len() < 2 {
            return Err(Error::Data(format!(
                "class {class} has {} member(s); stratified splitting needs at least 2",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let n_test = (members.len() as f64 * test_fraction).round() as usize;
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Predicts positive iff `prob >= threshold`.
pub fn confusion(probs: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionMatrix> {
    if probs.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} scores but {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &y) in probs.iter().zip(labels) {
        match (p >= threshold, y == 1) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, false) => cm.tn += 1,
            (false, true) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// A rate that may be undefined (zero denominator). Serialized as `"NA"`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(transparent)]
pub struct Metric(pub Option<f64>);

impl Metric {
    pub const NA: Metric = Metric(None);

    pub fn value(self) -> Option<f64> {
        self.0
    }

    fn ratio(num: usize, den: usize) -> Self {
        if den == 0 {
            Metric::NA
        } else {
            Metric(Some(num as f64 / den as f64))
        }
    }

    /// Percentage with two decimals, or `NA`.
    pub fn percent(self) -> String {
        match self.0 {
            Some(v) => format!("{:.2}", 100.0 * v),
            None => "NA".to_string(),
        }
    }
}

impl Serialize for Metric {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            Some(v) if v.is_finite() => s.serialize_f64(v),
            _ => s.serialize_str("NA"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdMetrics {
    pub sensitivity: Metric,
    pub specificity: Metric,
    pub ppv: Metric,
    pub npv: Metric,
    pub f1: Metric,
    pub accuracy: Metric,
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> ThresholdMetrics {
    let sensitivity = Metric::ratio(cm.tp, cm.tp + cm.fn_);
    let ppv = Metric::ratio(cm.tp, cm.tp + cm.fp);
    let f1 = match (ppv.0, sensitivity.0) {
        (Some(p), Some(r)) if p + r > 0.0 => Metric(Some(2.0 * p * r / (p + r))),
        _ => Metric::NA,
    };
    ThresholdMetrics {
        sensitivity,
        specificity: Metric::ratio(cm.tn, cm.tn + cm.fp),
        ppv,
        npv: Metric::ratio(cm.tn, cm.tn + cm.fn_),
        f1,
        accuracy: Metric::ratio(cm.tp + cm.tn, cm.total()),
    }
}

/// Mann-Whitney AUC from the positive-class rank sum, with average ranks for ties.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Data("AUC needs both classes".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("AUC scores".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut pos_rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // 1-based ranks start+1..=end share their average
        let avg_rank = (start + 1 + end) as f64 / 2.0;
        let pos_in_group = order[start..end].iter().filter(|&&i| labels[i] == 1).count();
        pos_rank_sum += avg_rank * pos_in_group as f64;
        start = end;
    }
    let p = n_pos as f64;
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n_neg as f64))
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

const MAX_REDRAWS: usize = 10_000;

/// 95% percentile-bootstrap interval for the AUC. Replicate `r` draws from
/// its own ChaCha stream `(seed, r)`, so results do not depend on scheduling.
pub fn bootstrap_auc_ci(scores: &[f64], labels: &[u8], n_boot: usize, seed: u64) -> Result<(f64, f64)> {
    if n_boot == 0 {
        return Err(Error::Config("bootstrap needs at least one replicate".into()));
    }
    auc(scores, labels)?;
    let n = scores.len();
    let mut replicates = (0..n_boot)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut s = vec![0.0; n];
            let mut y = vec![0u8; n];
            for _ in 0..MAX_REDRAWS {
                for k in 0..n {
                    let j = rng.gen_range(0..n);
                    s[k] = scores[j];
                    y[k] = labels[j];
                }
                if let Ok(a) = auc(&s, &y) {
                    return Ok(a);
                }
            }
            Err(Error::Data("bootstrap resamples kept drawing a single class".into()))
        })
        .collect::<Result<Vec<f64>>>()?;
    replicates.sort_by(f64::total_cmp);
    Ok((percentile(&replicates, 0.025), percentile(&replicates, 0.975)))
}

/// Threshold maximizing Youden's J (sensitivity + specificity - 1) over the
/// observed scores; the lowest such threshold wins ties.
pub fn youden_threshold(scores: &[f64], labels: &[u8]) -> Result<f64> {
    auc(scores, labels)?;
    let mut candidates = scores.to_vec();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let mut best = (f64::NEG_INFINITY, 0.5);
    for &t in &candidates {
        let cm = confusion(scores, labels, t)?;
        let m = compute_metrics(&cm);
        let j = m.sensitivity.0.unwrap_or(0.0) + m.specificity.0.unwrap_or(0.0) - 1.0;
        if j > best.0 {
            best = (j, t);
        }
    }
    Ok(best.1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub auc: Metric,
    pub auc_ci_low: Metric,
    pub auc_ci_high: Metric,
    pub sensitivity: Metric,
    pub specificity: Metric,
    pub ppv: Metric,
    pub npv: Metric,
    pub f1: Metric,
    pub accuracy: Metric,
    pub threshold: f64,
}

impl MetricsReport {
    pub fn from_parts(auc: Option<(f64, f64, f64)>, rates: ThresholdMetrics, threshold: f64) -> Self {
        let (a, lo, hi) = match auc {
            Some((a, lo, hi)) => (Metric(Some(a)), Metric(Some(lo)), Metric(Some(hi))),
            None => (Metric::NA, Metric::NA, Metric::NA),
        };
        Self {
            auc: a,
            auc_ci_low: lo,
            auc_ci_high: hi,
            sensitivity: rates.sensitivity,
            specificity: rates.specificity,
            ppv: rates.ppv,
            npv: rates.npv,
            f1: rates.f1,
            accuracy: rates.accuracy,
            threshold,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Full report for one scored set. AUC and its interval are `NA` when only
/// one class is present. The interval is widened to contain the point
/// estimate if the percentile bounds miss it.
pub fn evaluate(scores: &[f64], labels: &[u8], threshold: f64, n_boot: usize, seed: u64) -> Result<MetricsReport> {
    if scores.is_empty() {
        return Err(Error::Data("cannot evaluate an empty set".into()));
    }
    let cm = confusion(scores, labels, threshold)?;
    let auc_part = match auc(scores, labels) {
        Ok(a) => {
            let (lo, hi) = bootstrap_auc_ci(scores, labels, n_boot, seed)?;
            Some((a, lo.min(a), hi.max(a)))
        }
        Err(Error::Data(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricsReport::from_parts(auc_part, compute_metrics(&cm), threshold))
}

const COLUMNS: [&str; 7] = ["AUC (95% CI)", "Sens.(%)", "Spec.(%)", "PPV(%)", "NPV(%)", "F1(%)", "Acc.(%)"];

/// Rows of labelled reports rendered in the column order
/// AUC, Sens., Spec., PPV, NPV, F1, Acc.
pub struct MetricsTable<'a>(pub Vec<(&'a str, &'a MetricsReport)>);

impl fmt::Display for MetricsTable<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<(String, [String; 7])> = self
            .0
            .iter()
            .map(|(name, r)| {
                let auc = match (r.auc.0, r.auc_ci_low.0, r.auc_ci_high.0) {
                    (Some(_), Some(_), Some(_)) => format!(
                        "{} ({}-{})",
                        r.auc.percent(),
                        r.auc_ci_low.percent(),
                        r.auc_ci_high.percent()
                    ),
                    _ => "NA".to_string(),
                };
                (
                    name.to_string(),
                    [
                        auc,
                        r.sensitivity.percent(),
                        r.specificity.percent(),
                        r.ppv.percent(),
                        r.npv.percent(),
                        r.f1.percent(),
                        r.accuracy.percent(),
                    ],
                )
            })
            .collect();
        let name_w = rows.iter().map(|r| r.0.len()).chain([5]).max().unwrap_or(5);
        let widths: Vec<usize> = (0..7)
            .map(|c| rows.iter().map(|r| r.1[c].len()).chain([COLUMNS[c].len()]).max().unwrap())
            .collect();
        write!(f, "{:<name_w$}", "Model")?;
        for (c, w) in COLUMNS.iter().zip(&widths) {
            write!(f, "  {c:>w$}")?;
        }
        writeln!(f)?;
        for (name, cells) in &rows {
            write!(f, "{name:<name_w$}")?;
            for (cell, w) in cells.iter().zip(&widths) {
                write!(f, "  {cell:>w$}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
