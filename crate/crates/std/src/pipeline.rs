//! Train, update, evaluate and sweep over a prepared split, on any transport.

use std::net::TcpListener;
use std::time::{Duration, Instant};

use fedboost_core::data::{partition, shard};
use fedboost_core::federation::{AnonymityPolicy, LocalLink, Worker, WorkerAudit};
use fedboost_core::metrics::{evaluate, pr_curve, roc_curve, CurvePoint, EvalReport};
use fedboost_core::protocol::Phase;
use fedboost_core::trainer::{build_layouts, checked_layouts, drive, make_workers, predict_rows};
use fedboost_core::{Dataset, Model, Shard, SplitIndices, TrainConfig, TrainReport};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::transport::{connect, serve, SocketLink, ThreadLink};

/// Row counts of the reference credit-card split.
pub const DEFAULT_SIZES: (usize, usize, usize) = (179_363, 59_875, 45_569);

/// Update shards use a different shuffle than train shards.
const UPDATE_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// How a session reaches its workers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transport {
    /// Synchronous calls in the coordinator's thread.
    Direct,
    /// One thread per worker, frames passed over channels.
    Inproc,
    /// One thread per worker, frames encoded over loopback TCP.
    Loopback,
    /// External worker processes connect to this address.
    Listen(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sizes {
    Counts(usize, usize, usize),
    /// Train and update fractions; the test split takes the remainder.
    Fractions(f64, f64),
}

pub fn prepare(data: &Dataset, sizes: Sizes, seed: u64) -> Result<SplitIndices> {
    let n = data.n_rows();
    let (train, update, test) = match sizes {
        Sizes::Counts(a, b, c) => (a, b, c),
        Sizes::Fractions(tf, uf) => {
            if !(0.0..=1.0).contains(&tf) || !(0.0..=1.0).contains(&uf) || tf + uf > 1.0 {
                return Err(Error::Usage(format!("fractions {tf} and {uf} must lie in [0, 1] and sum to at most 1")));
            }
            let train = (n as f64 * tf).floor() as usize;
            let update = ((n as f64 * uf).floor() as usize).min(n - train);
            (train, update, n - train - update)
        }
    };
    Ok(partition(data, train, update, test, seed)?)
}

/// Train and update shards for `cfg.workers` parties. Update shards are empty when the
/// split has no update rows.
pub fn worker_shards(split: &SplitIndices, cfg: &TrainConfig) -> Result<(Vec<Shard>, Vec<Shard>)> {
    let train = shard(&split.train, cfg.workers, cfg.seed)?;
    let update = if split.update.is_empty() {
        Vec::new()
    } else {
        shard(&split.update, cfg.workers, cfg.seed ^ UPDATE_SEED_SALT)?
    };
    Ok((train, update))
}

/// One boosting session of `rounds` trees. Without a starting model the layouts are
/// built fresh and the model starts empty; otherwise they are rebuilt and checked
/// against the model's fingerprint.
#[allow(clippy::too_many_arguments)]
pub fn run_session(
    data: &Dataset,
    train: &[Shard],
    update: &[Shard],
    start: Option<Model>,
    rounds: u32,
    phase: Phase,
    cfg: &TrainConfig,
    transport: &Transport,
) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    if phase == Phase::Update && update.is_empty() {
        return Err(Error::Usage("the update phase needs update rows".into()));
    }
    let (layouts, model) = match start {
        None => {
            let layouts = build_layouts(data, train, cfg)?;
            let model = Model::new(data.n_features(), cfg.learning_rate, layouts.fingerprint());
            (layouts, model)
        }
        Some(model) => (checked_layouts(data, &model, train, cfg)?, model),
    };
    let clock = Instant::now();
    let (model, mut report) = match transport {
        Transport::Direct => {
            let mut link = LocalLink::new(make_workers(data, train, update, cfg)?);
            drive(&mut link, layouts, model, rounds, phase, cfg)?
        }
        Transport::Inproc => {
            let mut link = ThreadLink::spawn(make_workers(data, train, update, cfg)?);
            let out = drive(&mut link, layouts, model, rounds, phase, cfg)?;
            link.join()?;
            out
        }
        Transport::Loopback => {
            let listener = TcpListener::bind("127.0.0.1:0")?;
            let addr = listener.local_addr()?;
            let handles: Vec<_> = make_workers(data, train, update, cfg)?
                .into_iter()
                .map(|mut w| {
                    std::thread::spawn(move || -> Result<WorkerAudit> {
                        serve(connect(addr, Duration::from_secs(10))?, &mut w)?;
                        Ok(*w.audit())
                    })
                })
                .collect();
            let mut link = SocketLink::accept(&listener, cfg.workers)?;
            let out = drive(&mut link, layouts, model, rounds, phase, cfg);
            drop(link);
            for h in handles {
                h.join().map_err(|_| Error::Usage("worker thread panicked".into()))??;
            }
            out?
        }
        Transport::Listen(addr) => {
            let listener = TcpListener::bind(addr.as_str())?;
            let mut link = SocketLink::accept(&listener, cfg.workers)?;
            drive(&mut link, layouts, model, rounds, phase, cfg)?
        }
    };
    report.wall_time_secs = Some(clock.elapsed().as_secs_f64());
    Ok((model, report))
}

/// Initial training on the train split.
pub fn train(data: &Dataset, split: &SplitIndices, cfg: &TrainConfig, transport: &Transport) -> Result<(Model, TrainReport)> {
    let (tr, up) = worker_shards(split, cfg)?;
    run_session(data, &tr, &up, None, cfg.rounds_initial, Phase::Initial, cfg, transport)
}

/// Sparse update: appends `cfg.rounds_update` trees fed by the train split plus the
/// misclassified rows of the update split.
pub fn update(
    data: &Dataset,
    split: &SplitIndices,
    model: Model,
    cfg: &TrainConfig,
    transport: &Transport,
) -> Result<(Model, TrainReport)> {
    let (tr, up) = worker_shards(split, cfg)?;
    run_session(data, &tr, &up, Some(model), cfg.rounds_update, Phase::Update, cfg, transport)
}

/// Serves one party's shard to a coordinator at `addr`.
pub fn run_worker(
    data: &Dataset,
    split: &SplitIndices,
    worker_id: usize,
    cfg: &TrainConfig,
    addr: &str,
    timeout: Duration,
) -> Result<WorkerAudit> {
    let (tr, up) = worker_shards(split, cfg)?;
    let train = tr
        .get(worker_id)
        .ok_or_else(|| Error::Usage(format!("worker id {worker_id} out of range for {} workers", cfg.workers)))?;
    let update = up.get(worker_id).map_or(&[][..], |s| &s.rows[..]);
    let policy = AnonymityPolicy { k: cfg.k, enforce: cfg.k_enforcement };
    let mut worker = Worker::new(worker_id as u32, policy, data, &train.rows, update)?;
    serve(connect(addr, timeout)?, &mut worker)?;
    Ok(*worker.audit())
}

/// Metrics at threshold 0.5 plus both curves (empty when a class is missing).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub report: EvalReport,
    pub pr: Vec<CurvePoint>,
    pub roc: Vec<CurvePoint>,
}

pub fn evaluate_rows(model: &Model, data: &Dataset, rows: &[usize]) -> Result<Evaluation> {
    let scores = predict_rows(model, data, rows)?;
    let labels: Vec<u8> = rows.iter().map(|&r| data.label(r)).collect();
    let report = evaluate(&scores, &labels, 0.5)?;
    let (pr, roc) = if report.roc_auc.is_some() {
        (pr_curve(&scores, &labels)?, roc_curve(&scores, &labels)?)
    } else {
        (Vec::new(), Vec::new())
    };
    Ok(Evaluation { report, pr, roc })
}

/// Everything one train → evaluate → update → evaluate run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub initial: TrainReport,
    pub update: TrainReport,
    /// Test metrics after initial training.
    pub before: EvalReport,
    /// Test metrics after the sparse update.
    pub after: EvalReport,
    pub model: Model,
}

pub fn full_pipeline(data: &Dataset, split: &SplitIndices, cfg: &TrainConfig, transport: &Transport) -> Result<PipelineOutcome> {
    let (model, initial) = train(data, split, cfg, transport)?;
    let before = evaluate_rows(&model, data, &split.test)?.report;
    let (model, update_report) = update(data, split, model, cfg, transport)?;
    let after = evaluate_rows(&model, data, &split.test)?.report;
    Ok(PipelineOutcome { initial, update: update_report, before, after, model })
}

/// A bin count, or one bin per distinct training value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Dimension {
    Bins(usize),
    Full,
}

impl Dimension {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "full" => Ok(Self::Full),
            t => match t.parse::<usize>() {
                Ok(v) if v > 0 => Ok(Self::Bins(v)),
                _ => Err(Error::Usage(format!("bad dimension `{t}` (expected a positive integer or `full`)"))),
            },
        }
    }

    pub fn bins(self) -> Option<usize> {
        match self {
            Self::Bins(v) => Some(v),
            Self::Full => None,
        }
    }
}

impl std::fmt::Display for Dimension {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Bins(v) => write!(f, "{v}"),
            Self::Full => f.write_str("full"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub v: String,
    pub k_effective: Option<u64>,
    pub f1: Option<f64>,
    pub roc_auc: Option<f64>,
    pub pr_auc: Option<f64>,
    pub error: String,
}

/// Full pipeline per dimension, sorted ascending with `full` last. A failing dimension
/// is recorded in its row and the sweep moves on.
pub fn sweep(
    data: &Dataset,
    split: &SplitIndices,
    dims: &[Dimension],
    cfg: &TrainConfig,
    transport: &Transport,
) -> Vec<SweepRow> {
    let mut dims = dims.to_vec();
    dims.sort_unstable();
    dims.dedup();
    dims.into_iter()
        .map(|d| {
            let cfg = TrainConfig { v: d.bins(), ..cfg.clone() };
            match full_pipeline(data, split, &cfg, transport) {
                Ok(out) => SweepRow {
                    v: d.to_string(),
                    k_effective: Some(out.initial.k_effective),
                    f1: Some(out.after.f1),
                    roc_auc: out.after.roc_auc,
                    pr_auc: out.after.pr_auc,
                    error: String::new(),
                },
                Err(e) => SweepRow { v: d.to_string(), k_effective: None, f1: None, roc_auc: None, pr_auc: None, error: e.to_string() },
            }
        })
        .collect()
}

/// Fails with exit-code-3 errors when the configuration cannot run on this split,
/// without training anything.
pub fn check_feasible(data: &Dataset, split: &SplitIndices, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    let (train, _) = worker_shards(split, cfg)?;
    build_layouts(data, &train, cfg)?;
    Ok(())
}
