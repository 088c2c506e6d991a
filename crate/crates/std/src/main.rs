use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fedboost::error::{Error, Result};
use fedboost::persist::{load_model, load_splits, loss_rows, write_curve, write_json, write_rows};
use fedboost::pipeline::{self, Dimension, Sizes, Transport, DEFAULT_SIZES};
use fedboost::io::{load_csv_with_label, write_csv};
use fedboost::synth::{generate, SynthSpec};
use fedboost_core::{Dataset, SplitIndices, TrainConfig, TrainReport};

#[derive(Parser)]
#[command(name = "fedboost", version, about = "Federated gradient-boosted trees over k-anonymous histograms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a CSV into train / update / test row lists.
    Prepare(PrepareArgs),
    /// Train the initial model on the train split.
    Train(RunArgs),
    /// Append sparse-update trees using misclassified update rows.
    Update(RunArgs),
    /// Score a model on one split and write metrics and curves.
    Eval(EvalArgs),
    /// Train, update and evaluate once per bin count.
    Sweep(SweepArgs),
    /// Serve one party's shard to a coordinator started with `--transport socket --listen`.
    Worker(WorkerArgs),
    /// Write a seeded synthetic imbalanced CSV.
    Synth(SynthArgs),
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    /// Name of the 0/1 label column.
    #[arg(long, default_value = fedboost::io::DEFAULT_LABEL)]
    label: String,
}

#[derive(Args)]
struct PrepareArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Output path of the split document.
    #[arg(long, default_value = "splits.json")]
    splits: PathBuf,
    #[arg(long, env = "FEDBOOST_SEED", default_value_t = 0)]
    seed: u64,
    /// Train fraction; overrides the default row counts.
    #[arg(long)]
    train_frac: Option<f64>,
    /// Update fraction (with --train-frac); the test split takes the rest.
    #[arg(long, requires = "train_frac", default_value_t = 0.2)]
    update_frac: f64,
}

#[derive(Args, Clone)]
struct TrainArgs {
    /// Initial boosting rounds.
    #[arg(long, default_value_t = 100)]
    rounds: u32,
    /// Sparse-update rounds.
    #[arg(long, default_value_t = 30)]
    update_rounds: u32,
    #[arg(long, default_value_t = 4)]
    depth: u32,
    #[arg(long, default_value_t = 0.1)]
    rate: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0.0)]
    gamma: f64,
    /// Bins per feature, or `full` for one bin per distinct training value.
    #[arg(long, default_value = "full", value_parser = parse_dimension)]
    bins: Dimension,
    /// Minimum rows behind every transmitted bin.
    #[arg(long, default_value_t = 1)]
    k: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, env = "FEDBOOST_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    min_child: u64,
    /// Let workers send bins below k (for auditing only).
    #[arg(long)]
    no_k_enforcement: bool,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            rounds_initial: self.rounds,
            rounds_update: self.update_rounds,
            max_depth: self.depth,
            learning_rate: self.rate,
            lambda: self.lambda,
            gamma: self.gamma,
            v: self.bins.bins(),
            k: self.k,
            workers: self.workers,
            seed: self.seed,
            min_child_count: self.min_child,
            k_enforcement: !self.no_k_enforcement,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportKind {
    Inproc,
    Socket,
}

#[derive(Args)]
struct TransportArgs {
    #[arg(long, value_enum, default_value = "inproc")]
    transport: TransportKind,
    /// Socket mode: wait for external workers on this address instead of spawning them.
    #[arg(long)]
    listen: Option<String>,
}

impl TransportArgs {
    fn transport(&self) -> Result<Transport> {
        match (self.transport, &self.listen) {
            (TransportKind::Inproc, None) => Ok(Transport::Inproc),
            (TransportKind::Inproc, Some(_)) => Err(Error::Usage("--listen needs --transport socket".into())),
            (TransportKind::Socket, None) => Ok(Transport::Loopback),
            (TransportKind::Socket, Some(addr)) => Ok(Transport::Listen(addr.clone())),
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    splits: PathBuf,
    /// Starting model (required for update).
    #[arg(long)]
    model_in: Option<PathBuf>,
    #[arg(long, default_value = "model.json")]
    model_out: PathBuf,
    /// Directory for the report JSON and loss CSV.
    #[arg(long, default_value = ".")]
    report_dir: PathBuf,
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    transport: TransportArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitName {
    Train,
    Update,
    Test,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    splits: PathBuf,
    #[arg(long)]
    model_in: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    on: SplitName,
    #[arg(long, default_value = ".")]
    report_dir: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    splits: PathBuf,
    /// Comma-separated bin counts; `full` means one bin per distinct value.
    #[arg(long, value_delimiter = ',', value_parser = parse_dimension, default_value = "405,full")]
    dims: Vec<Dimension>,
    #[arg(long, default_value = ".")]
    report_dir: PathBuf,
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    transport: TransportArgs,
}

#[derive(Args)]
struct WorkerArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    splits: PathBuf,
    #[arg(long)]
    connect: String,
    #[arg(long)]
    worker_id: usize,
    /// Seconds to keep retrying the connection.
    #[arg(long, default_value_t = 30)]
    connect_timeout: u64,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5000)]
    rows: usize,
    #[arg(long, default_value_t = 30)]
    features: usize,
    #[arg(long, default_value_t = 0.02)]
    positive_rate: f64,
    #[arg(long, env = "FEDBOOST_SEED", default_value_t = 0)]
    seed: u64,
}

fn parse_dimension(s: &str) -> std::result::Result<Dimension, String> {
    Dimension::parse(s).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Prepare(a) => prepare(a),
        Command::Train(a) => train(a, false),
        Command::Update(a) => train(a, true),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::Worker(a) => worker(a),
        Command::Synth(a) => {
            let spec = SynthSpec { rows: a.rows, features: a.features, positive_rate: a.positive_rate, seed: a.seed };
            write_csv(&a.out, &generate(&spec)?, fedboost::io::DEFAULT_LABEL)
        }
    }
}

fn load(data: &DataArgs, splits: &Path) -> Result<(Dataset, SplitIndices)> {
    let ds = load_csv_with_label(&data.data, &data.label)?;
    let split = load_splits(splits, ds.n_rows())?;
    Ok((ds, split))
}

fn report_dir(dir: &Path) -> Result<&Path> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
    Ok(dir)
}

fn prepare(a: PrepareArgs) -> Result<()> {
    let ds = load_csv_with_label(&a.data.data, &a.data.label)?;
    let sizes = match a.train_frac {
        Some(tf) => Sizes::Fractions(tf, a.update_frac),
        None => Sizes::Counts(DEFAULT_SIZES.0, DEFAULT_SIZES.1, DEFAULT_SIZES.2),
    };
    let split = pipeline::prepare(&ds, sizes, a.seed)?;
    write_json(&a.splits, &split)?;
    eprintln!(
        "wrote {}: train {}, update {}, test {}",
        a.splits.display(),
        split.train.len(),
        split.update.len(),
        split.test.len()
    );
    Ok(())
}

/// Writes `<stem>_report.json` and `<stem>_loss.csv`. The wall time only goes to stderr
/// so that reruns produce identical files.
fn write_session(dir: &Path, stem: &str, report: &TrainReport, first_round: u32) -> Result<()> {
    let mut stored = report.clone();
    stored.wall_time_secs = None;
    write_json(&dir.join(format!("{stem}_report.json")), &stored)?;
    write_rows(&dir.join(format!("{stem}_loss.csv")), &loss_rows(first_round, report.initial_loss, &report.losses))?;
    eprintln!(
        "{stem}: {} trees, loss {:.6} -> {:.6}, k_effective {}, anonymity violations {}, {:.2}s",
        report.losses.len(),
        report.initial_loss,
        report.losses.last().copied().unwrap_or(report.initial_loss),
        report.k_effective,
        report.anonymity.violations,
        report.wall_time_secs.unwrap_or(0.0)
    );
    Ok(())
}

fn train(a: RunArgs, is_update: bool) -> Result<()> {
    let transport = a.transport.transport()?;
    let cfg = a.train.config();
    let (ds, split) = load(&a.data, &a.splits)?;
    pipeline::check_feasible(&ds, &split, &cfg)?;
    let dir = report_dir(&a.report_dir)?;
    let (model, report, first_round, stem) = if is_update {
        let path = a.model_in.as_ref().ok_or_else(|| Error::Usage("update needs --model-in".into()))?;
        let start = load_model(path)?;
        let first = start.trees.len() as u32;
        let (m, r) = pipeline::update(&ds, &split, start, &cfg, &transport)?;
        (m, r, first, "update")
    } else {
        let (m, r) = match &a.model_in {
            Some(path) => {
                let start = load_model(path)?;
                let (tr, up) = pipeline::worker_shards(&split, &cfg)?;
                pipeline::run_session(&ds, &tr, &up, Some(start), cfg.rounds_initial, fedboost_core::protocol::Phase::Initial, &cfg, &transport)?
            }
            None => pipeline::train(&ds, &split, &cfg, &transport)?,
        };
        let first = (m.trees.len() - r.losses.len()) as u32;
        (m, r, first, "train")
    };
    write_json(&a.model_out, &model)?;
    write_session(dir, stem, &report, first_round)
}

fn eval(a: EvalArgs) -> Result<()> {
    let (ds, split) = load(&a.data, &a.splits)?;
    let model = load_model(&a.model_in)?;
    let rows = match a.on {
        SplitName::Train => &split.train,
        SplitName::Update => &split.update,
        SplitName::Test => &split.test,
    };
    let out = pipeline::evaluate_rows(&model, &ds, rows)?;
    let dir = report_dir(&a.report_dir)?;
    write_json(&dir.join("metrics.json"), &out.report)?;
    write_curve(&dir.join("pr_curve.csv"), &out.pr)?;
    write_curve(&dir.join("roc_curve.csv"), &out.roc)?;
    let r = &out.report;
    eprintln!(
        "f1 {:.4}  precision {:.4}  recall {:.4}  roc_auc {}  pr_auc {}  accuracy {:.4}",
        r.f1,
        r.precision,
        r.recall,
        r.roc_auc.map_or("n/a".into(), |v| format!("{v:.4}")),
        r.pr_auc.map_or("n/a".into(), |v| format!("{v:.4}")),
        r.accuracy
    );
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let transport = a.transport.transport()?;
    let cfg = a.train.config();
    let (ds, split) = load(&a.data, &a.splits)?;
    cfg.validate()?;
    let dir = report_dir(&a.report_dir)?;
    let rows = pipeline::sweep(&ds, &split, &a.dims, &cfg, &transport);
    write_rows(&dir.join("sweep.csv"), &rows)?;
    for r in &rows {
        match r.f1 {
            Some(f1) => eprintln!("v={}: f1 {f1:.4}, k_effective {}", r.v, r.k_effective.unwrap_or(0)),
            None => eprintln!("v={}: {}", r.v, r.error),
        }
    }
    Ok(())
}

fn worker(a: WorkerArgs) -> Result<()> {
    let cfg = a.train.config();
    cfg.validate()?;
    let (ds, split) = load(&a.data, &a.splits)?;
    let audit = pipeline::run_worker(&ds, &split, a.worker_id, &cfg, &a.connect, Duration::from_secs(a.connect_timeout))?;
    eprintln!(
        "worker {}: {} reports, {} generalized, {} withheld",
        a.worker_id, audit.reports_sent, audit.generalized, audit.withheld
    );
    Ok(())
}
