//! In-memory dataset, deterministic train/update/test partitioning and horizontal sharding.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major feature matrix with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<u8>,
    feature_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset from row-major values. Every value must be finite and every
    /// label 0 or 1.
    pub fn new(features: Vec<f64>, labels: Vec<f64>, feature_names: Vec<String>) -> Result<Self> {
        let d = feature_names.len();
        if d == 0 {
            return Err(Error::Shape("dataset needs at least one feature".into()));
        }
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if features.len() != labels.len() * d {
            return Err(Error::Shape(format!(
                "{} values for {} rows x {} features",
                features.len(),
                labels.len(),
                d
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: pos / d, column: pos % d });
        }
        let labels = labels
            .iter()
            .enumerate()
            .map(|(row, &y)| match y {
                y if y == 0.0 => Ok(0),
                y if y == 1.0 => Ok(1),
                value => Err(Error::InvalidLabel { row, value }),
            })
            .collect::<Result<Vec<u8>>>()?;
        Ok(Self { features, labels, feature_names })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_features();
        &self.features[i * d..(i + 1) * d]
    }

    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.features[row * self.n_features() + feature]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    /// Copies the given rows, in order, into a new dataset.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut features = Vec::with_capacity(rows.len() * self.n_features());
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            if r >= self.n_rows() {
                return Err(Error::Shape(format!("row {r} out of range")));
            }
            features.extend_from_slice(self.row(r));
            labels.push(self.labels[r]);
        }
        Ok(Self { features, labels, feature_names: self.feature_names.clone() })
    }
}

/// Disjoint train / update / test row lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub seed: u64,
    pub train: Vec<usize>,
    pub update: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    /// Checks disjointness and exact coverage of `0..n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = alloc::vec![false; n];
        for &i in self.train.iter().chain(&self.update).chain(&self.test) {
            if i >= n || core::mem::replace(&mut seen[i], true) {
                return Err(Error::Shape(format!("split index {i} out of range or repeated")));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Shape("split indices do not cover every row".into()));
        }
        Ok(())
    }
}

/// One party's rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shard {
    pub worker_id: usize,
    pub rows: Vec<usize>,
}

fn shuffled(mut indices: Vec<usize>, seed: u64) -> Vec<usize> {
    // rand's slice shuffle is Fisher-Yates
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    indices
}

/// Seeded shuffle of `0..n` followed by contiguous train / update / test assignment.
pub fn partition(
    ds: &Dataset,
    train_n: usize,
    update_n: usize,
    test_n: usize,
    seed: u64,
) -> Result<SplitIndices> {
    let n = ds.n_rows();
    let got = train_n.saturating_add(update_n).saturating_add(test_n);
    if got != n {
        return Err(Error::PartitionCounts { expected: n, got });
    }
    let order = shuffled((0..n).collect(), seed);
    let (train, rest) = order.split_at(train_n);
    let (update, test) = rest.split_at(update_n);
    Ok(SplitIndices { seed, train: train.to_vec(), update: update.to_vec(), test: test.to_vec() })
}

/// Deals `indices` into `workers` shards after a seeded shuffle. The first
/// `len % workers` shards get one extra row.
pub fn shard(indices: &[usize], workers: usize, seed: u64) -> Result<Vec<Shard>> {
    if workers == 0 || workers > indices.len() {
        return Err(Error::WorkerCount { workers, rows: indices.len() });
    }
    let order = shuffled(indices.to_vec(), seed);
    let base = order.len() / workers;
    let extra = order.len() % workers;
    let mut out = Vec::with_capacity(workers);
    let mut start = 0;
    for worker_id in 0..workers {
        let len = base + usize::from(worker_id < extra);
        out.push(Shard { worker_id, rows: order[start..start + len].to_vec() });
        start += len;
    }
    Ok(out)
}
