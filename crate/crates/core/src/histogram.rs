//! Per-node, per-feature, per-bin gradient histograms.
//!
//! Histograms are stored sparsely as bin-sorted `(bin, stats)` entries. With one bin per
//! distinct value a dense node histogram would need hundreds of thousands of slots per
//! feature, most of them empty below the root.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::binning::BinLayoutSet;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::GradPair;
use crate::stats::GradStats;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureHistogram {
    pub feature: usize,
    pub num_bins: u32,
    /// Non-empty bins in increasing bin order.
    pub entries: Vec<(u32, GradStats)>,
}

impl FeatureHistogram {
    pub fn empty(feature: usize, num_bins: u32) -> Self {
        Self { feature, num_bins, entries: Vec::new() }
    }

    /// Adds `stats` to `bin`, which must not precede the last pushed bin.
    #[inline]
    pub(crate) fn push_sorted(&mut self, bin: u32, stats: GradStats) {
        match self.entries.last_mut() {
            Some((last, acc)) if *last == bin => *acc += stats,
            _ => {
                debug_assert!(self.entries.last().map_or(true, |(b, _)| *b < bin));
                self.entries.push((bin, stats));
            }
        }
    }

    pub fn get(&self, bin: u32) -> GradStats {
        match self.entries.binary_search_by_key(&bin, |(b, _)| *b) {
            Ok(i) => self.entries[i].1,
            Err(_) => GradStats::ZERO,
        }
    }

    pub fn to_dense(&self) -> Vec<GradStats> {
        let mut out = alloc::vec![GradStats::ZERO; self.num_bins as usize];
        for &(b, s) in &self.entries {
            out[b as usize] = s;
        }
        out
    }

    pub fn sum(&self) -> GradStats {
        self.entries.iter().fold(GradStats::ZERO, |acc, (_, s)| acc + *s)
    }

    pub fn min_nonzero_count(&self) -> Option<u64> {
        self.entries.iter().map(|(_, s)| s.count).filter(|&c| c > 0).min()
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.feature != other.feature || self.num_bins != other.num_bins {
            return Err(Error::Shape(format!(
                "feature {}/{} bins vs feature {}/{} bins",
                self.feature, self.num_bins, other.feature, other.num_bins
            )));
        }
        Ok(())
    }

    pub fn merge(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let mut entries = Vec::with_capacity(self.entries.len().max(other.entries.len()));
        let (mut i, mut j) = (0, 0);
        let (a, b) = (&self.entries, &other.entries);
        while i < a.len() || j < b.len() {
            if j == b.len() || (i < a.len() && a[i].0 < b[j].0) {
                entries.push(a[i]);
                i += 1;
            } else if i == a.len() || b[j].0 < a[i].0 {
                entries.push(b[j]);
                j += 1;
            } else {
                entries.push((a[i].0, a[i].1 + b[j].1));
                i += 1;
                j += 1;
            }
        }
        Ok(Self { feature: self.feature, num_bins: self.num_bins, entries })
    }

    /// `self - child`, where `child` covers a subset of the instances in `self`.
    pub fn subtract(&self, child: &Self) -> Result<Self> {
        self.check_compatible(child)?;
        let mut entries = Vec::with_capacity(self.entries.len());
        let mut j = 0;
        for &(bin, stats) in &self.entries {
            let mut rest = stats;
            if j < child.entries.len() && child.entries[j].0 == bin {
                rest = stats - child.entries[j].1;
                j += 1;
            }
            if rest.count == 0 {
                if !rest.is_zero() {
                    return Err(Error::Shape(format!("bin {bin} has statistics but no instances")));
                }
            } else if rest.count > stats.count {
                return Err(Error::Shape(format!("child has more instances than parent in bin {bin}")));
            } else {
                entries.push((bin, rest));
            }
        }
        if j != child.entries.len() {
            return Err(Error::Shape("child has bins absent from the parent".into()));
        }
        Ok(Self { feature: self.feature, num_bins: self.num_bins, entries })
    }

    /// Folds bins holding fewer than `k` instances into neighbours so that every
    /// non-empty bin holds at least `k`. Runs of small bins are pooled left to right into
    /// the bin that completes the group; an undersized remainder joins the last group.
    /// Returns `false` when the whole histogram holds fewer than `k` instances.
    fn generalize(&mut self, k: u64) -> bool {
        if self.min_nonzero_count().map_or(true, |m| m >= k) {
            return true;
        }
        let mut out: Vec<(u32, GradStats)> = Vec::with_capacity(self.entries.len());
        let mut pending = GradStats::ZERO;
        for &(bin, stats) in &self.entries {
            pending += stats;
            if pending.count >= k {
                out.push((bin, pending));
                pending = GradStats::ZERO;
            }
        }
        if pending.count > 0 {
            match out.last_mut() {
                Some((_, last)) => *last += pending,
                None => return false,
            }
        }
        self.entries = out;
        true
    }
}

/// What a worker did to an outgoing histogram to meet its anonymity floor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnonymityAction {
    Unchanged,
    Generalized,
    /// The node held fewer than `k` local instances; all statistics were withheld.
    Withheld,
}

/// Histograms of every feature for the instances at one tree node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeHistogramSet {
    pub node_id: u32,
    pub features: Vec<FeatureHistogram>,
    pub total: GradStats,
}

impl NodeHistogramSet {
    pub fn empty(node_id: u32, layouts: &BinLayoutSet) -> Self {
        let features = layouts
            .layouts
            .iter()
            .map(|l| FeatureHistogram::empty(l.feature, l.bins() as u32))
            .collect();
        Self { node_id, features, total: GradStats::ZERO }
    }

    /// Accumulates `grads[i]` of instance `rows[i]` into the bin its value maps to, for
    /// every feature.
    pub fn accumulate(
        data: &Dataset,
        rows: &[usize],
        grads: &[GradPair],
        layouts: &BinLayoutSet,
        node_id: u32,
    ) -> Result<Self> {
        if rows.len() != grads.len() {
            return Err(Error::Shape(format!("{} rows but {} gradient pairs", rows.len(), grads.len())));
        }
        if layouts.n_features() != data.n_features() {
            return Err(Error::Shape(format!(
                "{} layouts for {} features",
                layouts.n_features(),
                data.n_features()
            )));
        }
        let stats: Vec<GradStats> = grads.iter().map(|&p| GradStats::from_pair(p)).collect();
        let mut out = Self::empty(node_id, layouts);
        out.total = stats.iter().fold(GradStats::ZERO, |a, &s| a + s);
        let mut keyed: Vec<(u32, usize)> = Vec::with_capacity(rows.len());
        for (hist, layout) in out.features.iter_mut().zip(&layouts.layouts) {
            keyed.clear();
            for (i, &r) in rows.iter().enumerate() {
                keyed.push((layout.assign(data.value(r, layout.feature))?, i));
            }
            keyed.sort_unstable();
            for &(bin, i) in &keyed {
                hist.push_sorted(bin, stats[i]);
            }
        }
        Ok(out)
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.node_id != other.node_id {
            return Err(Error::Shape(format!("node {} vs node {}", self.node_id, other.node_id)));
        }
        if self.features.len() != other.features.len() {
            return Err(Error::Shape(format!(
                "{} features vs {} features",
                self.features.len(),
                other.features.len()
            )));
        }
        Ok(())
    }

    pub fn merge(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let features = self
            .features
            .iter()
            .zip(&other.features)
            .map(|(a, b)| a.merge(b))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { node_id: self.node_id, features, total: self.total + other.total })
    }

    /// Histogram of the sibling of `child`, given the parent histogram `self`.
    pub fn subtract(&self, child: &Self, sibling_id: u32) -> Result<Self> {
        if self.features.len() != child.features.len() {
            return Err(Error::Shape("feature count mismatch".into()));
        }
        let features = self
            .features
            .iter()
            .zip(&child.features)
            .map(|(p, c)| p.subtract(c))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { node_id: sibling_id, features, total: self.total - child.total })
    }

    pub fn min_nonzero_count(&self) -> Option<u64> {
        self.features.iter().filter_map(FeatureHistogram::min_nonzero_count).min()
    }

    /// Every feature's bins must sum to the node total.
    pub fn check_consistency(&self) -> Result<()> {
        for f in &self.features {
            if f.sum() != self.total {
                return Err(Error::Shape(format!(
                    "feature {} sums disagree with node {} totals",
                    f.feature, self.node_id
                )));
            }
            if f.entries.iter().any(|(b, _)| *b >= f.num_bins)
                || f.entries.windows(2).any(|w| w[0].0 >= w[1].0)
            {
                return Err(Error::Shape(format!("feature {} bins out of order or range", f.feature)));
            }
        }
        Ok(())
    }

    /// Makes every non-empty bin hold at least `k` instances, generalizing bins or
    /// withholding the node entirely.
    pub fn enforce_anonymity(&mut self, k: u64) -> AnonymityAction {
        if self.min_nonzero_count().map_or(true, |m| m >= k) {
            return AnonymityAction::Unchanged;
        }
        if self.total.count < k {
            for f in &mut self.features {
                f.entries.clear();
            }
            self.total = GradStats::ZERO;
            return AnonymityAction::Withheld;
        }
        for f in &mut self.features {
            let kept = f.generalize(k);
            debug_assert!(kept);
        }
        AnonymityAction::Generalized
    }
}
