//! Boosting sessions: initial training on the train shards and the sparse update that
//! mixes in misclassified rows of the update shards.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::binning::BinLayoutSet;
use crate::data::{Dataset, Shard};
use crate::error::{Error, Result};
use crate::federation::{AnonymityPolicy, Coordinator, GrowthConfig, Link, LocalLink, ReportAudit, Worker};
use crate::protocol::Phase;
use crate::split::Regularization;
use crate::tree::Model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub rounds_initial: u32,
    pub rounds_update: u32,
    pub max_depth: u32,
    pub learning_rate: f64,
    pub lambda: f64,
    pub gamma: f64,
    /// Bins per feature. `None` gives every distinct training value its own bin.
    pub v: Option<usize>,
    pub k: u64,
    pub workers: usize,
    pub seed: u64,
    pub min_child_count: u64,
    /// Workers generalize or withhold reports that would expose a bin below `k`.
    pub k_enforcement: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rounds_initial: 100,
            rounds_update: 30,
            max_depth: 4,
            learning_rate: 0.1,
            lambda: 1.0,
            gamma: 0.0,
            v: None,
            k: 1,
            workers: 1,
            seed: 0,
            min_child_count: 1,
            k_enforcement: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::InvalidArgument(format!("learning rate {} not in (0, 1]", self.learning_rate)));
        }
        Regularization::new(self.lambda, self.gamma)?;
        if self.max_depth > 30 {
            return Err(Error::InvalidArgument(format!("max depth {} exceeds 30", self.max_depth)));
        }
        if self.v == Some(0) {
            return Err(Error::InvalidArgument("bin count must be positive".into()));
        }
        if self.k == 0 || self.min_child_count == 0 {
            return Err(Error::InvalidArgument("k and min_child_count must be positive".into()));
        }
        if self.workers == 0 {
            return Err(Error::WorkerCount { workers: 0, rows: 0 });
        }
        Ok(())
    }

    pub fn regularization(&self) -> Regularization {
        Regularization { lambda: self.lambda, gamma: self.gamma }
    }

    pub fn growth(&self) -> GrowthConfig {
        GrowthConfig { max_depth: self.max_depth, reg: self.regularization(), min_child_count: self.min_child_count }
    }

    /// Bin count for a training partition of `n_train` rows.
    pub fn bins_for(&self, n_train: usize) -> usize {
        self.v.unwrap_or(n_train)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub phase: Phase,
    /// Mean training loss before the first tree of the session.
    pub initial_loss: f64,
    /// Mean training loss after each tree.
    pub losses: Vec<f64>,
    /// Misclassified update rows that fed each tree (all zero outside the update phase).
    pub wrong_counts: Vec<u64>,
    pub leaves: Vec<usize>,
    pub anonymity: ReportAudit,
    pub k_effective: u64,
    pub layout_fingerprint: String,
    /// Filled in by callers that have a clock.
    pub wall_time_secs: Option<f64>,
    pub model: Model,
}

fn sorted_rows(shards: &[Shard]) -> Vec<usize> {
    let mut rows: Vec<usize> = shards.iter().flat_map(|s| s.rows.iter().copied()).collect();
    rows.sort_unstable();
    rows
}

/// Layouts over the union of the train shards.
pub fn build_layouts(data: &Dataset, train_shards: &[Shard], cfg: &TrainConfig) -> Result<BinLayoutSet> {
    let rows = sorted_rows(train_shards);
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    BinLayoutSet::build(data, &rows, cfg.bins_for(rows.len()), cfg.k)
}

/// One worker per train shard; `update_shards` is either empty or pairs up with them.
pub fn make_workers(
    data: &Dataset,
    train_shards: &[Shard],
    update_shards: &[Shard],
    cfg: &TrainConfig,
) -> Result<Vec<Worker>> {
    if train_shards.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !update_shards.is_empty() && update_shards.len() != train_shards.len() {
        return Err(Error::Shape(format!(
            "{} update shards for {} train shards",
            update_shards.len(),
            train_shards.len()
        )));
    }
    let policy = AnonymityPolicy { k: cfg.k, enforce: cfg.k_enforcement };
    train_shards
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let update = update_shards.get(i).map_or(&[][..], |u| &u.rows[..]);
            Worker::new(i as u32, policy, data, &s.rows, update)
        })
        .collect()
}

/// Runs one session over `link`: handshake, layout and model sharing, `rounds` trees in
/// `phase`, final sync and shutdown.
pub fn drive<L: Link>(
    link: &mut L,
    layouts: BinLayoutSet,
    mut model: Model,
    rounds: u32,
    phase: Phase,
    cfg: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    if model.bin_layouts_ref != layouts.fingerprint() {
        return Err(Error::LayoutMismatch { expected: model.bin_layouts_ref.clone(), found: layouts.fingerprint() });
    }
    let k_effective = layouts.k_effective();
    let layout_fingerprint = layouts.fingerprint();
    let mut coordinator = Coordinator::new(link.workers() as u32, layouts, cfg.growth(), cfg.k)?;
    coordinator.handshake(link)?;
    let initial_loss = coordinator.share(link, &model)?;
    let mut losses = Vec::with_capacity(rounds as usize);
    let mut wrong_counts = Vec::with_capacity(rounds as usize);
    let mut leaves = Vec::with_capacity(rounds as usize);
    for _ in 0..rounds {
        let record = coordinator.grow_tree(link, &mut model, phase)?;
        losses.push(record.mean_loss);
        wrong_counts.push(record.wrong);
        leaves.push(record.leaves);
    }
    coordinator.finish(link, &model)?;
    let report = TrainReport {
        phase,
        initial_loss,
        losses,
        wrong_counts,
        leaves,
        anonymity: *coordinator.audit(),
        k_effective,
        layout_fingerprint,
        wall_time_secs: None,
        model: model.clone(),
    };
    Ok((model, report))
}

/// Trains `cfg.rounds_initial` trees from an empty model, driving workers in-process.
pub fn train_initial(data: &Dataset, shards: &[Shard], cfg: &TrainConfig) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    let layouts = build_layouts(data, shards, cfg)?;
    let model = Model::new(data.n_features(), cfg.learning_rate, layouts.fingerprint());
    let mut link = LocalLink::new(make_workers(data, shards, &[], cfg)?);
    drive(&mut link, layouts, model, cfg.rounds_initial, Phase::Initial, cfg)
}

/// Appends `rounds` ordinary trees to `model` using only the train shards.
pub fn continue_training(
    data: &Dataset,
    model: Model,
    shards: &[Shard],
    rounds: u32,
    cfg: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    let layouts = checked_layouts(data, &model, shards, cfg)?;
    let mut link = LocalLink::new(make_workers(data, shards, &[], cfg)?);
    drive(&mut link, layouts, model, rounds, Phase::Initial, cfg)
}

/// Appends `cfg.rounds_update` trees whose histograms add the misclassified update rows
/// to the base training rows.
pub fn sparse_update(
    data: &Dataset,
    model: Model,
    train_shards: &[Shard],
    update_shards: &[Shard],
    cfg: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    let layouts = checked_layouts(data, &model, train_shards, cfg)?;
    let mut link = LocalLink::new(make_workers(data, train_shards, update_shards, cfg)?);
    drive(&mut link, layouts, model, cfg.rounds_update, Phase::Update, cfg)
}

/// Rebuilds the layouts from the train shards and checks them against the model.
pub fn checked_layouts(data: &Dataset, model: &Model, train_shards: &[Shard], cfg: &TrainConfig) -> Result<BinLayoutSet> {
    model.validate()?;
    if model.n_features != data.n_features() {
        return Err(Error::Shape(format!("model has {} features, data {}", model.n_features, data.n_features())));
    }
    if model.learning_rate != cfg.learning_rate {
        return Err(Error::InvalidArgument(format!(
            "model learning rate {} differs from configured {}",
            model.learning_rate, cfg.learning_rate
        )));
    }
    let layouts = build_layouts(data, train_shards, cfg)?;
    let found = layouts.fingerprint();
    if found != model.bin_layouts_ref {
        return Err(Error::LayoutMismatch { expected: model.bin_layouts_ref.clone(), found });
    }
    Ok(layouts)
}

/// Rows of `rows` whose predicted class at threshold 0.5 differs from the label.
pub fn wrongly_classified(model: &Model, data: &Dataset, rows: &[usize]) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for &r in rows {
        if r >= data.n_rows() {
            return Err(Error::Shape(format!("row {r} out of range")));
        }
        if model.predict_class(data.row(r), 0.5)? != data.label(r) {
            out.push(r);
        }
    }
    Ok(out)
}

/// Predicted probabilities for `rows`.
pub fn predict_rows(model: &Model, data: &Dataset, rows: &[usize]) -> Result<Vec<f64>> {
    rows.iter()
        .map(|&r| {
            if r >= data.n_rows() {
                return Err(Error::Shape(format!("row {r} out of range")));
            }
            model.predict_proba(data.row(r))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::shard;
    use alloc::vec;

    fn separable(n: usize) -> Dataset {
        let xs: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let ys: Vec<f64> = (0..n).map(|i| f64::from(u8::from(i >= n / 2))).collect();
        Dataset::new(xs, ys, vec!["x".into()]).unwrap()
    }

    fn all_rows(n: usize) -> Vec<Shard> {
        vec![Shard { worker_id: 0, rows: (0..n).collect() }]
    }

    #[test]
    fn zero_rounds_is_base_margin_only() {
        let ds = separable(20);
        let cfg = TrainConfig { rounds_initial: 0, ..Default::default() };
        let (model, report) = train_initial(&ds, &all_rows(20), &cfg).unwrap();
        assert!(model.trees.is_empty());
        assert!(report.losses.is_empty());
        assert!((report.initial_loss - core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn separable_set_is_fit() {
        let ds = separable(20);
        let cfg = TrainConfig { rounds_initial: 50, max_depth: 1, ..Default::default() };
        let (model, report) = train_initial(&ds, &all_rows(20), &cfg).unwrap();
        assert_eq!(report.losses.len(), 50);
        assert!(report.losses[0] < core::f64::consts::LN_2);
        assert!(wrongly_classified(&model, &ds, &(0..20).collect::<Vec<_>>()).unwrap().is_empty());
    }

    #[test]
    fn untrained_model_misclassifies_positives() {
        let ds = separable(10);
        let model = Model::new(1, 0.1, String::new());
        assert_eq!(wrongly_classified(&model, &ds, &(0..10).collect::<Vec<_>>()).unwrap(), vec![5, 6, 7, 8, 9]);
    }

    #[test]
    fn worker_count_does_not_change_the_model() {
        let ds = separable(40);
        let rows: Vec<usize> = (0..40).collect();
        let cfg = TrainConfig { rounds_initial: 5, max_depth: 2, ..Default::default() };
        let (one, _) = train_initial(&ds, &all_rows(40), &cfg).unwrap();
        let (four, _) = train_initial(&ds, &shard(&rows, 4, 9).unwrap(), &cfg).unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn update_rejects_foreign_layouts() {
        let ds = separable(20);
        let cfg = TrainConfig { rounds_initial: 1, ..Default::default() };
        let (mut model, _) = train_initial(&ds, &all_rows(20), &cfg).unwrap();
        model.bin_layouts_ref = "0".into();
        let err = sparse_update(&ds, model, &all_rows(20), &[], &cfg).unwrap_err();
        assert!(matches!(err, Error::LayoutMismatch { .. }));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 1.5, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lambda: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { k: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { v: Some(0), ..Default::default() }.validate().is_err());
        assert!(TrainConfig { workers: 0, ..Default::default() }.validate().is_err());
    }
}
