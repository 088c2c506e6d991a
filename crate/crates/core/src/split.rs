//! Split scoring over merged histograms and optimal leaf weights.

use alloc::format;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histogram::NodeHistogramSet;
use crate::stats::GradStats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regularization {
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    /// Complexity cost per added leaf.
    pub gamma: f64,
}

impl Default for Regularization {
    fn default() -> Self {
        Self { lambda: 1.0, gamma: 0.0 }
    }
}

impl Regularization {
    pub fn new(lambda: f64, gamma: f64) -> Result<Self> {
        if !(lambda >= 0.0 && gamma >= 0.0 && lambda.is_finite() && gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda ({lambda}) and gamma ({gamma}) must be finite and non-negative"
            )));
        }
        Ok(Self { lambda, gamma })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitDecision {
    pub feature: usize,
    /// Bins `0..=cut_bin` go left.
    pub cut_bin: u32,
    pub gain: f64,
    pub left: GradStats,
    pub right: GradStats,
}

/// Loss reduction of splitting `(G_L+G_R, H_L+H_R)` into the two children.
#[inline]
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, reg: &Regularization) -> f64 {
    let g = gl + gr;
    let h = hl + hr;
    0.5 * (gl * gl / (hl + reg.lambda) + gr * gr / (hr + reg.lambda) - g * g / (h + reg.lambda))
        - reg.gamma
}

/// `-G / (H + lambda)`.
pub fn leaf_weight(g: f64, h: f64, reg: &Regularization) -> Result<f64> {
    let denom = h + reg.lambda;
    if denom <= 0.0 || !denom.is_finite() {
        return Err(Error::DegenerateHessian(denom));
    }
    Ok(-g / denom)
}

/// Scans every prefix of bins of every feature and returns the split with the largest
/// positive gain whose children both hold at least `min_child_count` instances. Ties go
/// to the lower feature, then the lower bin.
pub fn best_split(
    hist: &NodeHistogramSet,
    reg: &Regularization,
    min_child_count: u64,
) -> Option<SplitDecision> {
    let total = hist.total;
    let mut best: Option<SplitDecision> = None;
    for f in &hist.features {
        let mut left = GradStats::ZERO;
        // Only cuts right after a non-empty bin are distinct candidates; a cut after an
        // empty bin ties with the previous one and loses on bin order.
        for &(bin, stats) in &f.entries {
            left += stats;
            let right = total - left;
            if right.count == 0 {
                break;
            }
            if left.count < min_child_count || right.count < min_child_count {
                continue;
            }
            let (hl, hr) = (left.hess(), right.hess());
            if hl + reg.lambda <= 0.0 || hr + reg.lambda <= 0.0 {
                continue;
            }
            let gain = split_gain(left.grad(), hl, right.grad(), hr, reg);
            if gain > 0.0 && best.as_ref().map_or(true, |b| gain > b.gain) {
                best = Some(SplitDecision { feature: f.feature, cut_bin: bin, gain, left, right });
            }
        }
    }
    best
}
