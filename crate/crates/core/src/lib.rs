//! Federated gradient-boosted trees for extremely unbalanced binary classification.
//!
//! Parties hold disjoint row sets with identical feature columns. Each party maps its
//! feature values onto shared k-anonymous quantile bins ("virtual samples") and only ever
//! transmits per-bin sums of first/second-order logistic-loss statistics. A coordinator
//! merges those histograms, scores candidate splits and broadcasts the resulting tree.
//! After initial training, a sparse update phase appends trees whose histograms merge the
//! base training rows with the currently misclassified rows of a fresh update set.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, threads and sockets live in the
//! `fedboost` companion crate.
#![no_std]

extern crate alloc;

pub mod binning;
pub mod data;
pub mod error;
pub mod federation;
pub mod histogram;
pub mod loss;
pub mod metrics;
pub mod protocol;
pub mod split;
pub mod stats;
pub mod trainer;
pub mod tree;

pub use binning::{BinLayout, BinLayoutSet};
pub use data::{Dataset, Shard, SplitIndices};
pub use error::{Error, Result};
pub use histogram::{FeatureHistogram, NodeHistogramSet};
pub use loss::GradPair;
pub use split::{Regularization, SplitDecision};
pub use stats::GradStats;
pub use trainer::{TrainConfig, TrainReport};
pub use tree::{Model, TreeNode};
