//! Worker and coordinator state machines.
//!
//! Workers own their rows and only answer coordinator requests; the coordinator never
//! sees anything finer than a per-bin sum. Trees grow level by level: for every open node
//! the coordinator collects one histogram per worker, merges them, decides a split or a
//! leaf and broadcasts the decision. Workers route their rows accordingly.
//!
//! Node ids use heap numbering: the root is 0 and node `n` has children `2n+1`, `2n+2`.
//!
//! The [`Link`] trait abstracts the transport. [`LocalLink`] drives workers
//! synchronously in the calling thread; threaded and socket transports live in the std
//! companion crate and carry exactly the same frames.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::binning::BinLayoutSet;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::histogram::{AnonymityAction, NodeHistogramSet};
use crate::loss::{grad_pair_unchecked, loss_unchecked, sigmoid_unchecked};
use crate::protocol::{Frame, InstanceFilter, Phase, ProtocolMessage, SplitRule};
use crate::split::{best_split, leaf_weight, Regularization, SplitDecision};
use crate::stats::{GradStats, LossSum};
use crate::tree::{Model, TreeNode};

const NO_SLOT: u32 = u32::MAX;

#[inline]
pub fn node_depth(node_id: u32) -> u32 {
    31 - (node_id + 1).leading_zeros()
}

#[inline]
fn children(node_id: u32) -> (u32, u32) {
    (2 * node_id + 1, 2 * node_id + 2)
}

#[inline]
fn sibling(node_id: u32) -> u32 {
    if node_id % 2 == 1 {
        node_id + 1
    } else {
        node_id - 1
    }
}

fn protocol(msg: impl Into<alloc::string::String>) -> Error {
    Error::Protocol(msg.into())
}

/// A worker's copy of some of its rows, binned and pre-sorted by bin per feature.
#[derive(Debug, Clone)]
struct LocalBlock {
    d: usize,
    features: Vec<f64>,
    labels: Vec<u8>,
    /// Column-major bin indices.
    bins: Vec<u32>,
    /// Per feature, local row indices in increasing bin order.
    order: Vec<Vec<u32>>,
    /// Sum of leaf weights reached so far.
    raw_sum: Vec<f64>,
    node: Vec<u32>,
    stats: Vec<GradStats>,
    wrong: Vec<bool>,
}

impl LocalBlock {
    fn new(data: &Dataset, rows: &[usize]) -> Result<Self> {
        let d = data.n_features();
        let mut features = Vec::with_capacity(rows.len() * d);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            if r >= data.n_rows() {
                return Err(Error::Shape(format!("row {r} out of range")));
            }
            features.extend_from_slice(data.row(r));
            labels.push(data.label(r));
        }
        let n = rows.len();
        Ok(Self {
            d,
            features,
            labels,
            bins: Vec::new(),
            order: Vec::new(),
            raw_sum: alloc::vec![0.0; n],
            node: alloc::vec![0; n],
            stats: alloc::vec![GradStats::ZERO; n],
            wrong: alloc::vec![false; n],
        })
    }

    fn len(&self) -> usize {
        self.labels.len()
    }

    fn bin_with(&mut self, layouts: &BinLayoutSet) -> Result<()> {
        if layouts.n_features() != self.d {
            return Err(Error::Shape(format!("{} layouts for {} local features", layouts.n_features(), self.d)));
        }
        let n = self.len();
        self.bins = Vec::with_capacity(n * self.d);
        self.order = Vec::with_capacity(self.d);
        for layout in &layouts.layouts {
            let start = self.bins.len();
            for i in 0..n {
                self.bins.push(layout.assign_unchecked(self.features[i * self.d + layout.feature]));
            }
            let col = &self.bins[start..];
            let mut order: Vec<u32> = (0..n as u32).collect();
            order.sort_by_key(|&i| (col[i as usize], i));
            self.order.push(order);
        }
        Ok(())
    }

    fn reset_margins(&mut self, model: &Model) {
        for i in 0..self.len() {
            self.raw_sum[i] = model.raw_sum(&self.features[i * self.d..(i + 1) * self.d]);
        }
    }

    fn margin(&self, i: usize, base: f64, rate: f64) -> f64 {
        base + rate * self.raw_sum[i]
    }

    /// Histograms for `nodes` (ascending) over rows passing `include`.
    fn accumulate(
        &self,
        nodes: &[u32],
        layouts: &BinLayoutSet,
        include: impl Fn(usize) -> bool,
    ) -> Vec<NodeHistogramSet> {
        let slots: BTreeMap<u32, u32> = nodes.iter().enumerate().map(|(s, &n)| (n, s as u32)).collect();
        let slot_of: Vec<u32> = (0..self.len())
            .map(|i| if include(i) { slots.get(&self.node[i]).copied().unwrap_or(NO_SLOT) } else { NO_SLOT })
            .collect();
        let mut out: Vec<NodeHistogramSet> = nodes.iter().map(|&n| NodeHistogramSet::empty(n, layouts)).collect();
        for (i, &s) in slot_of.iter().enumerate() {
            if s != NO_SLOT {
                out[s as usize].total += self.stats[i];
            }
        }
        let n = self.len();
        for (f, order) in self.order.iter().enumerate() {
            let col = &self.bins[f * n..(f + 1) * n];
            for &i in order {
                let s = slot_of[i as usize];
                if s != NO_SLOT {
                    out[s as usize].features[f].push_sorted(col[i as usize], self.stats[i as usize]);
                }
            }
        }
        out
    }

    fn count_at(&self, node: u32) -> usize {
        self.node.iter().filter(|&&n| n == node).count()
    }

    fn route(&mut self, node: u32, rule: &SplitRule) {
        let (left, right) = children(node);
        let d = self.d;
        for i in 0..self.len() {
            if self.node[i] == node {
                let x = self.features[i * d + rule.feature as usize];
                self.node[i] = if x <= rule.threshold { left } else { right };
            }
        }
    }
}

/// Anonymity policy a worker applies to everything it sends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnonymityPolicy {
    pub k: u64,
    pub enforce: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WorkerAudit {
    pub reports_sent: u64,
    pub generalized: u64,
    pub withheld: u64,
    /// Reports that left the worker with a non-empty bin below `k`.
    pub violations: u64,
    pub min_nonzero_bin: Option<u64>,
}

/// One party: its rows, their margins and current tree-node membership.
#[derive(Debug, Clone)]
pub struct Worker {
    id: u32,
    policy: AnonymityPolicy,
    train: LocalBlock,
    update: LocalBlock,
    layouts: Option<BinLayoutSet>,
    base_margin: f64,
    learning_rate: f64,
    has_model: bool,
    tree: Option<(u32, Phase)>,
    open: BTreeSet<u32>,
    leaves: BTreeMap<u32, f64>,
    base_cache: BTreeMap<u32, NodeHistogramSet>,
    last_round: u32,
    audit: WorkerAudit,
    shut_down: bool,
}

impl Worker {
    /// `train_rows` feed every tree; `update_rows` only contribute their misclassified
    /// members during the update phase.
    pub fn new(
        worker_id: u32,
        policy: AnonymityPolicy,
        data: &Dataset,
        train_rows: &[usize],
        update_rows: &[usize],
    ) -> Result<Self> {
        if policy.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        Ok(Self {
            id: worker_id,
            policy,
            train: LocalBlock::new(data, train_rows)?,
            update: LocalBlock::new(data, update_rows)?,
            layouts: None,
            base_margin: 0.0,
            learning_rate: 1.0,
            has_model: false,
            tree: None,
            open: BTreeSet::new(),
            leaves: BTreeMap::new(),
            base_cache: BTreeMap::new(),
            last_round: 0,
            audit: WorkerAudit::default(),
            shut_down: false,
        })
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn audit(&self) -> &WorkerAudit {
        &self.audit
    }

    pub fn is_shut_down(&self) -> bool {
        self.shut_down
    }

    pub fn hello(&self) -> Frame {
        Frame::new(0, ProtocolMessage::Hello { worker_id: self.id })
    }

    /// Current margins of the base training rows.
    pub fn train_margins(&self) -> Vec<f64> {
        (0..self.train.len()).map(|i| self.train.margin(i, self.base_margin, self.learning_rate)).collect()
    }

    /// Local indices of update rows currently flagged as misclassified.
    pub fn wrong_rows(&self) -> Vec<usize> {
        (0..self.update.len()).filter(|&i| self.update.wrong[i]).collect()
    }

    fn layouts(&self) -> Result<&BinLayoutSet> {
        self.layouts.as_ref().ok_or_else(|| protocol("layouts not received"))
    }

    fn loss_sum(&self) -> LossSum {
        let mut sum = LossSum::default();
        for i in 0..self.train.len() {
            sum.push(loss_unchecked(self.train.labels[i], self.train.margin(i, self.base_margin, self.learning_rate)));
        }
        sum
    }

    fn stats_frame(&self) -> Frame {
        let wrong = self.update.wrong.iter().filter(|&&w| w).count() as u64;
        Frame::new(
            self.last_round,
            ProtocolMessage::RoundStats { worker_id: self.id, loss: self.loss_sum(), wrong },
        )
    }

    fn begin_tree(&mut self, tree_index: u32, phase: Phase) -> Result<()> {
        self.layouts()?;
        if !self.has_model {
            return Err(protocol("model not received"));
        }
        let (base, rate) = (self.base_margin, self.learning_rate);
        for i in 0..self.train.len() {
            let y = self.train.labels[i];
            self.train.stats[i] = GradStats::from_pair(grad_pair_unchecked(y, self.train.margin(i, base, rate)));
        }
        self.train.node.iter_mut().for_each(|n| *n = 0);
        self.update.node.iter_mut().for_each(|n| *n = 0);
        for i in 0..self.update.len() {
            let m = self.update.margin(i, base, rate);
            let y = self.update.labels[i];
            // threshold 0.5, strict
            let predicted = u8::from(sigmoid_unchecked(m) > 0.5);
            self.update.wrong[i] = phase == Phase::Update && predicted != y;
            self.update.stats[i] = GradStats::from_pair(grad_pair_unchecked(y, m));
        }
        self.tree = Some((tree_index, phase));
        self.open = core::iter::once(0).collect();
        self.leaves.clear();
        self.base_cache.clear();
        Ok(())
    }

    fn check_tree(&self, tree_index: u32) -> Result<()> {
        match self.tree {
            Some((t, _)) if t == tree_index => Ok(()),
            _ => Err(protocol(format!("tree {tree_index} is not being grown"))),
        }
    }

    fn check_open(&self, node_id: u32) -> Result<()> {
        if self.open.contains(&node_id) {
            Ok(())
        } else {
            Err(protocol(format!("unknown node {node_id}")))
        }
    }

    /// Base histograms for `nodes`, deriving one child of each sibling pair from the
    /// cached parent when possible.
    fn base_histograms(&mut self, nodes: &[u32]) -> Result<Vec<NodeHistogramSet>> {
        let requested: BTreeSet<u32> = nodes.iter().copied().collect();
        let mut direct: Vec<u32> = Vec::new();
        let mut derived: Vec<(u32, u32)> = Vec::new(); // (node, sibling built directly)
        for &n in nodes {
            if n != 0 && requested.contains(&sibling(n)) && self.base_cache.contains_key(&((n - 1) / 2)) {
                let s = sibling(n);
                if n > s {
                    continue; // pair handled from its lower id
                }
                let (cn, cs) = (self.train.count_at(n), self.train.count_at(s));
                let (small, large) = if cn <= cs { (n, s) } else { (s, n) };
                direct.push(small);
                derived.push((large, small));
            } else {
                direct.push(n);
            }
        }
        direct.sort_unstable();
        let layouts = self.layouts()?.clone();
        let built = self.train.accumulate(&direct, &layouts, |_| true);
        let mut by_node: BTreeMap<u32, NodeHistogramSet> = direct.into_iter().zip(built).collect();
        for (large, small) in derived {
            let parent = &self.base_cache[&((large - 1) / 2)];
            let hist = parent.subtract(&by_node[&small], large)?;
            by_node.insert(large, hist);
        }
        self.base_cache = by_node.clone();
        Ok(nodes.iter().map(|n| by_node.remove(n).unwrap()).collect())
    }

    fn wrong_histograms(&self, nodes: &[u32]) -> Result<Vec<NodeHistogramSet>> {
        let layouts = self.layouts()?;
        let wrong = &self.update.wrong;
        Ok(self.update.accumulate(nodes, layouts, |i| wrong[i]))
    }

    fn histograms(&mut self, nodes: &[u32], filter: InstanceFilter) -> Result<Vec<NodeHistogramSet>> {
        match filter {
            InstanceFilter::Base => self.base_histograms(nodes),
            InstanceFilter::WrongOnly => self.wrong_histograms(nodes),
            InstanceFilter::Integrated => {
                let base = self.base_histograms(nodes)?;
                let wrong = self.wrong_histograms(nodes)?;
                base.iter().zip(&wrong).map(|(b, w)| b.merge(w)).collect()
            }
        }
    }

    fn release(&mut self, mut hist: NodeHistogramSet) -> NodeHistogramSet {
        if self.policy.enforce {
            match hist.enforce_anonymity(self.policy.k) {
                AnonymityAction::Unchanged => {}
                AnonymityAction::Generalized => self.audit.generalized += 1,
                AnonymityAction::Withheld => self.audit.withheld += 1,
            }
        }
        let min = hist.min_nonzero_count();
        if min.map_or(false, |m| m < self.policy.k) {
            self.audit.violations += 1;
        }
        if let Some(m) = min {
            self.audit.min_nonzero_bin = Some(self.audit.min_nonzero_bin.map_or(m, |a| a.min(m)));
        }
        self.audit.reports_sent += 1;
        hist
    }

    /// The histogram this worker would send for one open node, without using cached
    /// parent histograms.
    pub fn report(&mut self, tree_index: u32, node_id: u32, filter: InstanceFilter) -> Result<ProtocolMessage> {
        self.check_tree(tree_index)?;
        self.check_open(node_id)?;
        let layouts = self.layouts()?.clone();
        let base = || self.train.accumulate(&[node_id], &layouts, |_| true).pop().unwrap();
        let wrong = || self.update.accumulate(&[node_id], &layouts, |i| self.update.wrong[i]).pop().unwrap();
        let hist = match filter {
            InstanceFilter::Base => base(),
            InstanceFilter::WrongOnly => wrong(),
            InstanceFilter::Integrated => base().merge(&wrong())?,
        };
        Ok(ProtocolMessage::HistogramReport { tree_index, worker_id: self.id, hist: self.release(hist) })
    }

    /// Processes one coordinator frame and returns the frames to send back.
    pub fn handle(&mut self, frame: Frame) -> Result<Vec<Frame>> {
        if self.shut_down {
            return Err(protocol("worker is shut down"));
        }
        if frame.round < self.last_round {
            return Err(protocol(format!("round went backwards: {} after {}", frame.round, self.last_round)));
        }
        self.last_round = frame.round;
        let round = frame.round;
        match frame.message {
            ProtocolMessage::LayoutShare(layouts) => {
                self.train.bin_with(&layouts)?;
                self.update.bin_with(&layouts)?;
                self.layouts = Some(layouts);
                Ok(Vec::new())
            }
            ProtocolMessage::ModelSync(model) => {
                model.validate()?;
                if model.n_features != self.train.d {
                    return Err(Error::Shape(format!("model has {} features", model.n_features)));
                }
                if let Some(layouts) = &self.layouts {
                    let fp = layouts.fingerprint();
                    if fp != model.bin_layouts_ref {
                        return Err(Error::LayoutMismatch { expected: model.bin_layouts_ref, found: fp });
                    }
                }
                self.base_margin = model.base_margin;
                self.learning_rate = model.learning_rate;
                self.train.reset_margins(&model);
                self.update.reset_margins(&model);
                self.has_model = true;
                Ok(alloc::vec![self.stats_frame()])
            }
            ProtocolMessage::BeginTree { tree_index, phase } => {
                self.begin_tree(tree_index, phase)?;
                Ok(Vec::new())
            }
            ProtocolMessage::HistogramRequest { tree_index, filter, nodes } => {
                self.check_tree(tree_index)?;
                if nodes.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(protocol("requested nodes must be strictly ascending"));
                }
                for &n in &nodes {
                    self.check_open(n)?;
                }
                let hists = self.histograms(&nodes, filter)?;
                Ok(hists
                    .into_iter()
                    .map(|h| {
                        let hist = self.release(h);
                        Frame::new(round, ProtocolMessage::HistogramReport { tree_index, worker_id: self.id, hist })
                    })
                    .collect())
            }
            ProtocolMessage::SplitBroadcast { tree_index, node_id, split } => {
                self.check_tree(tree_index)?;
                self.check_open(node_id)?;
                let rule = split.ok_or_else(|| protocol("split broadcast without a rule"))?;
                if rule.feature as usize >= self.train.d {
                    return Err(protocol(format!("split on unknown feature {}", rule.feature)));
                }
                self.train.route(node_id, &rule);
                self.update.route(node_id, &rule);
                self.open.remove(&node_id);
                let (l, r) = children(node_id);
                self.open.insert(l);
                self.open.insert(r);
                Ok(Vec::new())
            }
            ProtocolMessage::LeafBroadcast { tree_index, node_id, weight } => {
                self.check_tree(tree_index)?;
                self.check_open(node_id)?;
                self.open.remove(&node_id);
                self.leaves.insert(node_id, weight);
                Ok(Vec::new())
            }
            ProtocolMessage::RoundComplete { .. } => {
                if self.tree.is_none() || !self.open.is_empty() {
                    return Err(protocol("round completed with open nodes"));
                }
                for block in [&mut self.train, &mut self.update] {
                    for i in 0..block.len() {
                        let w = *self
                            .leaves
                            .get(&block.node[i])
                            .ok_or_else(|| protocol(format!("row ended at non-leaf node {}", block.node[i])))?;
                        block.raw_sum[i] += w;
                    }
                }
                self.tree = None;
                self.base_cache.clear();
                Ok(alloc::vec![self.stats_frame()])
            }
            ProtocolMessage::Shutdown => {
                self.shut_down = true;
                Ok(Vec::new())
            }
            ProtocolMessage::Hello { .. }
            | ProtocolMessage::HistogramReport { .. }
            | ProtocolMessage::RoundStats { .. } => Err(protocol("unexpected worker-bound message")),
        }
    }
}

/// Coordinator-side transport to every worker. Worker `i` is reached at index `i`.
pub trait Link {
    fn workers(&self) -> usize;
    fn send(&mut self, worker: usize, frame: &Frame) -> Result<()>;
    fn recv(&mut self, worker: usize) -> Result<Frame>;

    fn broadcast(&mut self, frame: &Frame) -> Result<()> {
        for w in 0..self.workers() {
            self.send(w, frame)?;
        }
        Ok(())
    }
}

/// Drives workers synchronously in the calling thread.
pub struct LocalLink {
    workers: Vec<Worker>,
    inbox: Vec<VecDeque<Frame>>,
}

impl LocalLink {
    pub fn new(workers: Vec<Worker>) -> Self {
        let inbox = workers.iter().map(|w| core::iter::once(w.hello()).collect()).collect();
        Self { workers, inbox }
    }

    pub fn workers_ref(&self) -> &[Worker] {
        &self.workers
    }
}

impl Link for LocalLink {
    fn workers(&self) -> usize {
        self.workers.len()
    }

    fn send(&mut self, worker: usize, frame: &Frame) -> Result<()> {
        let out = self.workers[worker].handle(frame.clone())?;
        self.inbox[worker].extend(out);
        Ok(())
    }

    fn recv(&mut self, worker: usize) -> Result<Frame> {
        self.inbox[worker].pop_front().ok_or_else(|| protocol(format!("no message pending from worker {worker}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthConfig {
    pub max_depth: u32,
    pub reg: Regularization,
    pub min_child_count: u64,
}

/// Anonymity audit of every histogram the coordinator received.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReportAudit {
    pub k: u64,
    pub reports: u64,
    pub violations: u64,
    pub min_nonzero_bin: Option<u64>,
}

impl ReportAudit {
    fn record(&mut self, hist: &NodeHistogramSet) {
        self.reports += 1;
        if let Some(m) = hist.min_nonzero_count() {
            if m < self.k {
                self.violations += 1;
            }
            self.min_nonzero_bin = Some(self.min_nonzero_bin.map_or(m, |a| a.min(m)));
        }
    }
}

/// What the coordinator decided for one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeOutcome {
    Split { rule: SplitRule, decision: SplitDecision },
    Leaf { weight: f64 },
}

impl NodeOutcome {
    pub fn to_message(&self, tree_index: u32, node_id: u32) -> ProtocolMessage {
        match self {
            NodeOutcome::Split { rule, .. } => {
                ProtocolMessage::SplitBroadcast { tree_index, node_id, split: Some(*rule) }
            }
            NodeOutcome::Leaf { weight } => ProtocolMessage::LeafBroadcast { tree_index, node_id, weight: *weight },
        }
    }
}

/// Summary of one finished boosting round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub mean_loss: f64,
    pub wrong: u64,
    pub leaves: usize,
}

pub struct Coordinator {
    workers: u32,
    layouts: BinLayoutSet,
    growth: GrowthConfig,
    round: u32,
    audit: ReportAudit,
}

impl Coordinator {
    /// `k_audit` is the anonymity floor checked on every incoming report.
    pub fn new(workers: u32, layouts: BinLayoutSet, growth: GrowthConfig, k_audit: u64) -> Result<Self> {
        if workers == 0 {
            return Err(Error::WorkerCount { workers: 0, rows: 0 });
        }
        if growth.max_depth > 30 {
            return Err(Error::InvalidArgument(format!("max_depth {} exceeds 30", growth.max_depth)));
        }
        Ok(Self { workers, layouts, growth, round: 0, audit: ReportAudit { k: k_audit, ..Default::default() } })
    }

    pub fn audit(&self) -> &ReportAudit {
        &self.audit
    }

    pub fn layouts(&self) -> &BinLayoutSet {
        &self.layouts
    }

    fn leaf(&self, total: GradStats) -> NodeOutcome {
        // a node whose workers all withheld has no usable statistics
        let weight = leaf_weight(total.grad(), total.hess(), &self.growth.reg).unwrap_or(0.0);
        NodeOutcome::Leaf { weight }
    }

    /// Merges one report per expected worker for `node_id` and decides split or leaf.
    pub fn step(&mut self, node_id: u32, reports: &[(u32, NodeHistogramSet)]) -> Result<NodeOutcome> {
        let mut seen = alloc::vec![false; self.workers as usize];
        for (w, hist) in reports {
            let slot = seen.get_mut(*w as usize).ok_or_else(|| protocol(format!("unexpected worker {w}")))?;
            if core::mem::replace(slot, true) {
                return Err(protocol(format!("duplicate report from worker {w} for node {node_id}")));
            }
            if hist.node_id != node_id {
                return Err(protocol(format!("report for node {} filed under {node_id}", hist.node_id)));
            }
            if hist.n_features() != self.layouts.n_features()
                || hist.features.iter().zip(&self.layouts.layouts).any(|(f, l)| f.num_bins as usize != l.bins())
            {
                return Err(Error::Shape(format!("report from worker {w} does not match the layouts")));
            }
            hist.check_consistency()?;
        }
        if let Some(w) = seen.iter().position(|s| !s) {
            return Err(protocol(format!("missing report from worker {w} for node {node_id}")));
        }
        let mut sorted: Vec<&(u32, NodeHistogramSet)> = reports.iter().collect();
        sorted.sort_by_key(|(w, _)| *w);
        let mut merged = sorted[0].1.clone();
        for (_, h) in &sorted[1..] {
            merged = merged.merge(h)?;
        }
        if node_depth(node_id) >= self.growth.max_depth {
            return Ok(self.leaf(merged.total));
        }
        match best_split(&merged, &self.growth.reg, self.growth.min_child_count) {
            Some(decision) => {
                let layout = &self.layouts.layouts[decision.feature];
                let threshold = *layout
                    .cuts
                    .get(decision.cut_bin as usize)
                    .ok_or_else(|| Error::Shape(format!("cut bin {} out of range", decision.cut_bin)))?;
                let rule = SplitRule { feature: layout.feature as u32, threshold };
                Ok(NodeOutcome::Split { rule, decision })
            }
            None => Ok(self.leaf(merged.total)),
        }
    }

    fn send_all(&self, link: &mut impl Link, message: ProtocolMessage) -> Result<()> {
        link.broadcast(&Frame::new(self.round, message))
    }

    fn expect_stats(&self, link: &mut impl Link) -> Result<(LossSum, u64)> {
        let mut loss = LossSum::default();
        let mut wrong = 0;
        for w in 0..link.workers() {
            match link.recv(w)?.message {
                ProtocolMessage::RoundStats { worker_id, loss: l, wrong: x } if worker_id as usize == w => {
                    loss.merge(l);
                    wrong += x;
                }
                other => return Err(protocol(format!("expected round stats from worker {w}, got {other:?}"))),
            }
        }
        Ok((loss, wrong))
    }

    /// Waits for every worker's hello; worker `i` must answer on link index `i`.
    pub fn handshake(&mut self, link: &mut impl Link) -> Result<()> {
        if link.workers() != self.workers as usize {
            return Err(protocol(format!("{} links for {} workers", link.workers(), self.workers)));
        }
        for w in 0..link.workers() {
            match link.recv(w)?.message {
                ProtocolMessage::Hello { worker_id } if worker_id as usize == w => {}
                other => return Err(protocol(format!("expected hello from worker {w}, got {other:?}"))),
            }
        }
        Ok(())
    }

    /// Shares layouts and the starting model; returns the mean training loss under it.
    pub fn share(&mut self, link: &mut impl Link, model: &Model) -> Result<f64> {
        self.round = model.trees.len() as u32;
        self.send_all(link, ProtocolMessage::LayoutShare(self.layouts.clone()))?;
        self.send_all(link, ProtocolMessage::ModelSync(model.clone()))?;
        Ok(self.expect_stats(link)?.0.mean())
    }

    /// Grows one tree level by level and appends it to `model`.
    pub fn grow_tree(&mut self, link: &mut impl Link, model: &mut Model, phase: Phase) -> Result<RoundRecord> {
        let tree_index = model.trees.len() as u32;
        self.round = tree_index;
        self.send_all(link, ProtocolMessage::BeginTree { tree_index, phase })?;
        let filter = match phase {
            Phase::Initial => InstanceFilter::Base,
            Phase::Update => InstanceFilter::Integrated,
        };
        let mut outcomes: BTreeMap<u32, NodeOutcome> = BTreeMap::new();
        let mut open: Vec<(u32, Option<GradStats>)> = alloc::vec![(0, None)];
        while !open.is_empty() {
            let need: Vec<u32> = open
                .iter()
                .filter(|(n, known)| node_depth(*n) < self.growth.max_depth || known.is_none())
                .map(|(n, _)| *n)
                .collect();
            let mut reports: BTreeMap<u32, Vec<(u32, NodeHistogramSet)>> = BTreeMap::new();
            if !need.is_empty() {
                self.send_all(link, ProtocolMessage::HistogramRequest { tree_index, filter, nodes: need.clone() })?;
                for w in 0..link.workers() {
                    for _ in 0..need.len() {
                        let frame = link.recv(w)?;
                        match frame.message {
                            ProtocolMessage::HistogramReport { tree_index: t, worker_id, hist }
                                if t == tree_index && worker_id as usize == w =>
                            {
                                if !need.contains(&hist.node_id) {
                                    return Err(protocol(format!("unrequested node {}", hist.node_id)));
                                }
                                self.audit.record(&hist);
                                reports.entry(hist.node_id).or_default().push((worker_id, hist));
                            }
                            other => {
                                return Err(protocol(format!("expected histogram from worker {w}, got {other:?}")))
                            }
                        }
                    }
                }
            }
            let mut next = Vec::new();
            for (node, known) in open {
                let outcome = match reports.remove(&node) {
                    Some(r) => self.step(node, &r)?,
                    None => self.leaf(known.expect("nodes without reports carry known totals")),
                };
                self.send_all(link, outcome.to_message(tree_index, node))?;
                if let NodeOutcome::Split { decision, .. } = outcome {
                    let (l, r) = children(node);
                    next.push((l, Some(decision.left)));
                    next.push((r, Some(decision.right)));
                }
                outcomes.insert(node, outcome);
            }
            open = next;
        }
        let tree = assemble(&outcomes, 0)?;
        let leaves = tree.n_leaves();
        model.trees.push(tree);
        self.send_all(link, ProtocolMessage::RoundComplete { round: tree_index })?;
        let (loss, wrong) = self.expect_stats(link)?;
        Ok(RoundRecord { round: tree_index, mean_loss: loss.mean(), wrong, leaves })
    }

    /// Sends the final model and shuts the workers down. Returns their final mean loss.
    pub fn finish(&mut self, link: &mut impl Link, model: &Model) -> Result<f64> {
        self.round = model.trees.len() as u32;
        self.send_all(link, ProtocolMessage::ModelSync(model.clone()))?;
        let loss = self.expect_stats(link)?.0.mean();
        self.send_all(link, ProtocolMessage::Shutdown)?;
        Ok(loss)
    }
}

fn assemble(outcomes: &BTreeMap<u32, NodeOutcome>, node: u32) -> Result<TreeNode> {
    match outcomes.get(&node) {
        Some(NodeOutcome::Leaf { weight }) => Ok(TreeNode::Leaf { weight: *weight }),
        Some(NodeOutcome::Split { rule, .. }) => {
            let (l, r) = children(node);
            Ok(TreeNode::Split {
                feature: rule.feature as usize,
                cut: rule.threshold,
                left: Box::new(assemble(outcomes, l)?),
                right: Box::new(assemble(outcomes, r)?),
            })
        }
        None => Err(protocol(format!("node {node} was never decided"))),
    }
}
