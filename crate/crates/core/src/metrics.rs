//! Confusion matrix, F1, ROC-AUC and area under the precision-recall curve.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `(tp + tn) / n`. Reported for completeness; meaningless on skewed data.
    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            (self.tp + self.tn) as f64 / self.total() as f64
        }
    }
}

/// A ratio that falls back to 0 when its denominator is 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub value: f64,
    pub degenerate: bool,
}

impl Ratio {
    fn of(num: u64, den: u64) -> Self {
        if den == 0 {
            Self { value: 0.0, degenerate: true }
        } else {
            Self { value: num as f64 / den as f64, degenerate: false }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub f1: Ratio,
    pub precision: Ratio,
    pub recall: Ratio,
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite { row: i, column: 0 });
    }
    if let Some(i) = labels.iter().position(|&y| y > 1) {
        return Err(Error::InvalidLabel { row: i, value: f64::from(labels[i]) });
    }
    Ok(())
}

/// Counts predictions `score > threshold` against labels.
pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionMatrix> {
    check_inputs(scores, labels)?;
    let mut cm = ConfusionMatrix::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s > threshold, y == 1) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, true) => cm.fn_ += 1,
            (false, false) => cm.tn += 1,
        }
    }
    Ok(cm)
}

/// `2TP / (2TP + FP + FN)` with precision `TP/(TP+FP)` and recall `TP/(TP+FN)`.
pub fn f1(cm: &ConfusionMatrix) -> F1Score {
    F1Score {
        f1: Ratio::of(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn_),
        precision: Ratio::of(cm.tp, cm.tp + cm.fp),
        recall: Ratio::of(cm.tp, cm.tp + cm.fn_),
    }
}

fn class_counts(labels: &[u8]) -> Result<(u64, u64)> {
    let pos = labels.iter().filter(|&&y| y == 1).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument("both classes must be present".into()));
    }
    Ok((pos, neg))
}

/// Indices sorted by descending score.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Cumulative (threshold, tp, fp) after admitting each group of tied scores, highest
/// threshold first.
fn sweep(scores: &[f64], labels: &[u8]) -> Vec<(f64, u64, u64)> {
    let order = descending(scores);
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((s, tp, fp));
    }
    out
}

/// Probability that a random positive scores above a random negative, ties counting ½.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let (pos, neg) = class_counts(labels)?;
    // Mann-Whitney U from mid-ranks (ascending). Twice the rank sum keeps it integral.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j share mid-rank (i+1+j)/2
        let twice_mid = (i + 1 + j) as u128;
        let positives = order[i..j].iter().filter(|&&r| labels[r] == 1).count() as u128;
        twice_rank_sum += twice_mid * positives;
        i = j;
    }
    let pos = pos as u128;
    let twice_u = twice_rank_sum - pos * (pos + 1);
    Ok(twice_u as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Area under the step precision-recall curve: `sum (R_i - R_{i-1}) * P_i` over
/// descending distinct thresholds, starting from recall 0.
pub fn pr_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let (pos, _) = class_counts(labels)?;
    let mut area = 0.0;
    let mut prev_tp = 0u64;
    for (_, tp, fp) in sweep(scores, labels) {
        if tp > prev_tp {
            let precision = tp as f64 / (tp + fp) as f64;
            area += (tp - prev_tp) as f64 / pos as f64 * precision;
            prev_tp = tp;
        }
    }
    Ok(area)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub x: f64,
    pub y: f64,
}

/// (threshold, recall, precision) per distinct score, ascending threshold. A point with
/// threshold `t` counts scores `>= t` as positive.
pub fn pr_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<CurvePoint>> {
    check_inputs(scores, labels)?;
    let (pos, _) = class_counts(labels)?;
    let mut pts: Vec<CurvePoint> = sweep(scores, labels)
        .into_iter()
        .map(|(t, tp, fp)| CurvePoint {
            threshold: t,
            x: tp as f64 / pos as f64,
            y: tp as f64 / (tp + fp) as f64,
        })
        .collect();
    pts.reverse();
    Ok(pts)
}

/// (threshold, false-positive rate, true-positive rate) per distinct score, ascending
/// threshold.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<CurvePoint>> {
    check_inputs(scores, labels)?;
    let (pos, neg) = class_counts(labels)?;
    let mut pts: Vec<CurvePoint> = sweep(scores, labels)
        .into_iter()
        .map(|(t, tp, fp)| CurvePoint { threshold: t, x: fp as f64 / neg as f64, y: tp as f64 / pos as f64 })
        .collect();
    pts.reverse();
    Ok(pts)
}

/// Everything reported for one evaluated split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub roc_auc: Option<f64>,
    pub pr_auc: Option<f64>,
    pub confusion: ConfusionMatrix,
}

pub fn evaluate(scores: &[f64], labels: &[u8], threshold: f64) -> Result<EvalReport> {
    let cm = confusion(scores, labels, threshold)?;
    let f = f1(&cm);
    let both = class_counts(labels).is_ok();
    Ok(EvalReport {
        threshold,
        accuracy: cm.accuracy(),
        f1: f.f1.value,
        precision: f.precision.value,
        recall: f.recall.value,
        roc_auc: if both { Some(roc_auc(scores, labels)?) } else { None },
        pr_auc: if both { Some(pr_auc(scores, labels)?) } else { None },
        confusion: cm,
    })
}
