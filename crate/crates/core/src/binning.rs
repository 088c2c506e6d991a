//! Equal-frequency, k-anonymous binning of each feature into "virtual samples".
//!
//! A [`BinLayout`] maps raw values of one feature onto at most `v` bins. Bins are cut at
//! quantile ranks, never between equal values, and every bin holds at least `k` of the
//! instances the layout was built from. Cuts sit at the midpoint between the adjacent
//! distinct values; a value equal to a cut belongs to the bin on its left.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinLayout {
    pub feature: usize,
    /// Strictly increasing thresholds, one fewer than the number of bins.
    pub cuts: Vec<f64>,
    /// Instances per bin in the building data.
    pub populations: Vec<u64>,
}

impl BinLayout {
    pub fn bins(&self) -> usize {
        self.cuts.len() + 1
    }

    pub fn min_population(&self) -> u64 {
        self.populations.iter().copied().min().unwrap_or(0)
    }

    /// Index `i` with `cuts[i-1] < value <= cuts[i]`.
    pub fn assign(&self, value: f64) -> Result<u32> {
        if !value.is_finite() {
            return Err(Error::InvalidArgument(format!("cannot bin non-finite value {value}")));
        }
        Ok(self.assign_unchecked(value))
    }

    #[inline]
    pub(crate) fn assign_unchecked(&self, value: f64) -> u32 {
        self.cuts.partition_point(|&c| c < value) as u32
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    let mid = a / 2.0 + b / 2.0;
    if mid >= a && mid < b {
        mid
    } else {
        a
    }
}

/// Builds the layout for one feature from its raw values.
///
/// When `v` is at least the number of distinct values the layout collapses to one bin
/// per distinct value; `bins()` then reports the reduced count.
pub fn build_layout(feature: usize, values: &[f64], v: usize, k: u64) -> Result<BinLayout> {
    if values.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if v == 0 || k == 0 {
        return Err(Error::InvalidArgument(format!("bins ({v}) and k ({k}) must be positive")));
    }
    if let Some(row) = values.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { row, column: feature });
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let n = sorted.len();

    // distinct values and the number of values <= each of them
    let mut distinct: Vec<f64> = Vec::new();
    let mut cumulative: Vec<usize> = Vec::new();
    for (i, &x) in sorted.iter().enumerate() {
        if distinct.last() == Some(&x) {
            *cumulative.last_mut().unwrap() = i + 1;
        } else {
            distinct.push(x);
            cumulative.push(i + 1);
        }
    }
    let m = distinct.len();
    let bins = v.min(m);
    if (bins as u128) * u128::from(k) > n as u128 {
        return Err(Error::AnonymityUnsatisfiable { bins, k, values: n });
    }

    // Boundary j means "cut between distinct[j] and distinct[j + 1]".
    let mut boundaries: Vec<usize> = Vec::with_capacity(bins.saturating_sub(1));
    if bins == m {
        boundaries.extend(0..m - 1);
    } else {
        let candidates = &cumulative[..m - 1];
        for i in 1..bins {
            let target = (2 * i * n + bins) / (2 * bins);
            let hi = candidates.partition_point(|&c| c < target);
            let j = if hi == 0 {
                0
            } else if hi == candidates.len() {
                hi - 1
            } else if target - candidates[hi - 1] <= candidates[hi] - target {
                hi - 1
            } else {
                hi
            };
            if boundaries.last().map_or(true, |&last| j > last) {
                boundaries.push(j);
            }
        }
    }

    // Enforce the anonymity floor: close a bin only once it holds k values, and fold an
    // undersized tail into the previous bin.
    let mut kept: Vec<usize> = Vec::with_capacity(boundaries.len());
    let mut populations: Vec<u64> = Vec::with_capacity(boundaries.len() + 1);
    let mut open_start = 0usize;
    for &j in &boundaries {
        let pop = (cumulative[j] - open_start) as u64;
        if pop >= k {
            kept.push(j);
            populations.push(pop);
            open_start = cumulative[j];
        }
    }
    let tail = (n - open_start) as u64;
    if tail >= k || kept.is_empty() {
        populations.push(tail);
    } else {
        kept.pop();
        let last = populations.pop().unwrap();
        populations.push(last + tail);
    }

    let cuts = kept.iter().map(|&j| midpoint(distinct[j], distinct[j + 1])).collect();
    Ok(BinLayout { feature, cuts, populations })
}

/// One layout per feature, shared by every party.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinLayoutSet {
    pub v: usize,
    pub k: u64,
    pub layouts: Vec<BinLayout>,
}

impl BinLayoutSet {
    /// Builds layouts for every feature from the given rows of `data`.
    pub fn build(data: &Dataset, rows: &[usize], v: usize, k: u64) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut values = Vec::with_capacity(rows.len());
        let layouts = (0..data.n_features())
            .map(|f| {
                values.clear();
                values.extend(rows.iter().map(|&r| data.value(r, f)));
                build_layout(f, &values, v, k)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { v, k, layouts })
    }

    pub fn n_features(&self) -> usize {
        self.layouts.len()
    }

    /// Smallest bin population over all features.
    pub fn k_effective(&self) -> u64 {
        self.layouts.iter().map(BinLayout::min_population).min().unwrap_or(0)
    }

    pub fn max_bins(&self) -> usize {
        self.layouts.iter().map(BinLayout::bins).max().unwrap_or(0)
    }

    pub fn assign(&self, feature: usize, value: f64) -> Result<u32> {
        self.layouts
            .get(feature)
            .ok_or_else(|| Error::Shape(format!("no layout for feature {feature}")))?
            .assign(value)
    }

    /// Hex SHA-256 over `v`, `k` and every cut, used to tie a model to its layouts.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.v as u64).to_le_bytes());
        hasher.update(self.k.to_le_bytes());
        for layout in &self.layouts {
            hasher.update((layout.feature as u64).to_le_bytes());
            hasher.update((layout.cuts.len() as u64).to_le_bytes());
            for c in &layout.cuts {
                hasher.update(c.to_bits().to_le_bytes());
            }
        }
        let mut out = String::with_capacity(64);
        for byte in hasher.finalize() {
            let _ = write!(out, "{byte:02x}");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnonymityAudit {
    pub k: u64,
    /// Smallest bin population per feature when `data` is assigned through the layouts.
    pub min_population: Vec<u64>,
    pub pass: bool,
}

/// Counts how many rows of `data` land in each bin and reports the smallest count per
/// feature.
pub fn audit_anonymity(layouts: &BinLayoutSet, data: &Dataset) -> Result<AnonymityAudit> {
    if layouts.n_features() != data.n_features() {
        return Err(Error::Shape(format!(
            "{} layouts for {} features",
            layouts.n_features(),
            data.n_features()
        )));
    }
    let mut min_population = Vec::with_capacity(layouts.n_features());
    for layout in &layouts.layouts {
        let mut counts = alloc::vec![0u64; layout.bins()];
        for r in 0..data.n_rows() {
            counts[layout.assign(data.value(r, layout.feature))? as usize] += 1;
        }
        min_population.push(counts.into_iter().min().unwrap_or(0));
    }
    let pass = min_population.iter().all(|&m| m >= layouts.k);
    Ok(AnonymityAudit { k: layouts.k, min_population, pass })
}
