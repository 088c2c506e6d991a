//! Independent test oracles and fixture generators shared by the integration tests.
#![allow(dead_code)]

use fedboost_core::histogram::{FeatureHistogram, NodeHistogramSet};
use fedboost_core::loss::{grad_pair, loss_value};
use fedboost_core::metrics::{confusion, f1, roc_auc, ConfusionMatrix};
use fedboost_core::split::{best_split, leaf_weight};
use fedboost_core::stats::to_fixed;
use fedboost_core::trainer::train_initial;
use fedboost_core::{BinLayoutSet, Dataset, GradStats, Regularization, Shard, TrainConfig, TreeNode};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// Random fixture with a learnable signal on feature 0. Some features live on a small
/// integer grid so ties are common.
pub fn random_fixture(rng: &mut StdRng, n: usize, d: usize) -> Dataset {
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row = Vec::with_capacity(d);
        for f in 0..d {
            let x = if f % 2 == 1 { f64::from(rng.random_range(0..6)) } else { rng.random_range(-3.0..3.0) };
            row.push(x);
        }
        let signal = row[0] + if d > 1 { 0.5 * row[1] } else { 0.0 } + rng.random_range(-1.5..1.5);
        labels.push(f64::from(u8::from(signal > 1.0)));
        features.extend(row);
    }
    let names = (0..d).map(|f| format!("f{f}")).collect();
    Dataset::new(features, labels, names).unwrap()
}

/// Imbalanced fixture: roughly `pos_rate` positives, shifted in a few features.
pub fn imbalanced_fixture(rng: &mut StdRng, n: usize, d: usize, pos_rate: f64) -> Dataset {
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y = rng.random_bool(pos_rate);
        for f in 0..d {
            let shift = if y && f < 3 { 2.0 } else { 0.0 };
            features.push(rng.random_range(-1.0..1.0) + rng.random_range(-1.0..1.0) + shift);
        }
        labels.push(f64::from(u8::from(y)));
    }
    let names = (0..d).map(|f| format!("f{f}")).collect();
    Dataset::new(features, labels, names).unwrap()
}

const GRID: f64 = (1u64 << 40) as f64;

/// Rounds onto the 2^-40 grid the trainer aggregates on.
pub fn quantize(x: f64) -> f64 {
    (x * GRID).round() / GRID
}

pub fn eq5_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64, gamma: f64) -> f64 {
    let g = gl + gr;
    let h = hl + hr;
    0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - g * g / (h + lambda)) - gamma
}

#[derive(Debug, Clone, Copy)]
pub struct RefConfig {
    pub rounds: usize,
    pub max_depth: usize,
    pub rate: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub min_child: usize,
}

/// Centralized exact-greedy boosting over raw values.
///
/// Every value present at a node (except the largest) is a candidate; the threshold is
/// the midpoint between it and the next distinct value of the whole training set.
pub fn reference_train(data: &Dataset, rows: &[usize], c: &RefConfig) -> Vec<TreeNode> {
    let d = data.n_features();
    let distinct: Vec<Vec<f64>> = (0..d)
        .map(|f| {
            let mut v: Vec<f64> = rows.iter().map(|&r| data.value(r, f)).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        })
        .collect();
    let mut raw = vec![0.0; rows.len()];
    let mut trees = Vec::new();
    for _ in 0..c.rounds {
        let gh: Vec<(f64, f64)> = rows
            .iter()
            .zip(&raw)
            .map(|(&r, &s)| {
                let p = grad_pair(data.label(r), 0.0 + c.rate * s).unwrap();
                (quantize(p.g), quantize(p.h))
            })
            .collect();
        let all: Vec<usize> = (0..rows.len()).collect();
        let tree = grow(data, rows, &gh, &distinct, &all, 0, c);
        for (i, &r) in rows.iter().enumerate() {
            raw[i] += route(&tree, data.row(r));
        }
        trees.push(tree);
    }
    trees
}

fn route(tree: &TreeNode, x: &[f64]) -> f64 {
    match tree {
        TreeNode::Leaf { weight } => *weight,
        TreeNode::Split { feature, cut, left, right } => {
            if x[*feature] <= *cut {
                route(left, x)
            } else {
                route(right, x)
            }
        }
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a / 2.0 + b / 2.0;
    if m >= a && m < b {
        m
    } else {
        a
    }
}

fn grow(
    data: &Dataset,
    rows: &[usize],
    gh: &[(f64, f64)],
    distinct: &[Vec<f64>],
    idx: &[usize],
    depth: usize,
    c: &RefConfig,
) -> TreeNode {
    let g: f64 = idx.iter().map(|&i| gh[i].0).sum();
    let h: f64 = idx.iter().map(|&i| gh[i].1).sum();
    if depth < c.max_depth {
        let mut best: Option<(f64, usize, f64)> = None;
        for (f, global) in distinct.iter().enumerate() {
            let mut present: Vec<f64> = idx.iter().map(|&i| data.value(rows[i], f)).collect();
            present.sort_by(f64::total_cmp);
            present.dedup();
            for &a in &present[..present.len().saturating_sub(1)] {
                let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0usize);
                for &i in idx {
                    if data.value(rows[i], f) <= a {
                        gl += gh[i].0;
                        hl += gh[i].1;
                        nl += 1;
                    }
                }
                let nr = idx.len() - nl;
                if nl < c.min_child || nr < c.min_child {
                    continue;
                }
                let (gr, hr) = (g - gl, h - hl);
                if hl + c.lambda <= 0.0 || hr + c.lambda <= 0.0 {
                    continue;
                }
                let gain = eq5_gain(gl, hl, gr, hr, c.lambda, c.gamma);
                if gain > 0.0 && best.map_or(true, |b| gain > b.0) {
                    let succ = global[global.partition_point(|&v| v <= a)];
                    best = Some((gain, f, midpoint(a, succ)));
                }
            }
        }
        if let Some((_, f, cut)) = best {
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| data.value(rows[i], f) <= cut);
            return TreeNode::Split {
                feature: f,
                cut,
                left: Box::new(grow(data, rows, gh, distinct, &l, depth + 1, c)),
                right: Box::new(grow(data, rows, gh, distinct, &r, depth + 1, c)),
            };
        }
    }
    TreeNode::Leaf { weight: -g / (h + c.lambda) }
}

/// Describes the first structural or numeric difference between two trees.
pub fn tree_diff(a: &TreeNode, b: &TreeNode, tol: f64, path: &str) -> Option<String> {
    match (a, b) {
        (TreeNode::Leaf { weight: x }, TreeNode::Leaf { weight: y }) => {
            ((x - y).abs() > tol).then(|| format!("{path}: leaf {x} vs {y}"))
        }
        (
            TreeNode::Split { feature: fa, cut: ca, left: la, right: ra },
            TreeNode::Split { feature: fb, cut: cb, left: lb, right: rb },
        ) => {
            if fa != fb || (ca - cb).abs() > tol {
                return Some(format!("{path}: split ({fa}, {ca}) vs ({fb}, {cb})"));
            }
            tree_diff(la, lb, tol, &format!("{path}L")).or_else(|| tree_diff(ra, rb, tol, &format!("{path}R")))
        }
        _ => Some(format!("{path}: leaf vs split")),
    }
}

/// Dense per-bin (G, H, count) via a naive loop over rows and features.
pub fn brute_histogram(
    data: &Dataset,
    rows: &[usize],
    grads: &[(f64, f64)],
    layouts: &BinLayoutSet,
) -> Vec<Vec<(f64, f64, u64)>> {
    let mut out: Vec<Vec<(f64, f64, u64)>> =
        layouts.layouts.iter().map(|l| vec![(0.0, 0.0, 0); l.cuts.len() + 1]).collect();
    for (i, &r) in rows.iter().enumerate() {
        for (f, layout) in layouts.layouts.iter().enumerate() {
            let x = data.value(r, f);
            // first bin whose upper cut is >= x
            let mut b = layout.cuts.len();
            for (j, &c) in layout.cuts.iter().enumerate() {
                if x <= c {
                    b = j;
                    break;
                }
            }
            out[f][b].0 += grads[i].0;
            out[f][b].1 += grads[i].1;
            out[f][b].2 += 1;
        }
    }
    out
}

/// Relative comparison with magnitudes below 1 treated as 1, so sums that cancel to
/// near zero are compared absolutely.
pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

/// Runs `fixtures` random cases and returns a description of every mismatch.
pub fn reference_mismatches(fixtures: u64) -> Vec<String> {
    let mut failures = Vec::new();
    for case in 0..fixtures {
        let mut r = rng(1000 + case);
        let n = r.random_range(20..=200);
        let d = r.random_range(1..=5);
        let data = random_fixture(&mut r, n, d);
        let rounds = r.random_range(1..=6);
        let depth = r.random_range(1..=4);
        let gamma = if case % 3 == 0 { 0.05 } else { 0.0 };
        let min_child = if case % 4 == 0 { 3 } else { 1 };
        let cfg = TrainConfig {
            rounds_initial: rounds,
            max_depth: depth,
            gamma,
            min_child_count: min_child,
            v: None,
            k: 1,
            workers: 1,
            ..Default::default()
        };
        let rows: Vec<usize> = (0..n).collect();
        let (model, _) = train_initial(&data, &[Shard { worker_id: 0, rows: rows.clone() }], &cfg).unwrap();
        let reference = reference_train(
            &data,
            &rows,
            &RefConfig {
                rounds: rounds as usize,
                max_depth: depth as usize,
                rate: cfg.learning_rate,
                lambda: cfg.lambda,
                gamma,
                min_child: min_child as usize,
            },
        );
        if model.trees.len() != reference.len() {
            failures.push(format!("case {case}: {} trees vs {}", model.trees.len(), reference.len()));
            continue;
        }
        for (t, (a, b)) in model.trees.iter().zip(&reference).enumerate() {
            if let Some(diff) = tree_diff(a, b, 1e-9, "") {
                failures.push(format!("case {case} tree {t}: {diff}"));
                break;
            }
        }
    }
    failures
}

/// Worst (gradient, hessian) finite-difference errors over `cases` random (y, margin).
pub fn finite_difference_errors(cases: usize, seed: u64) -> (f64, f64) {
    let eps = 1e-4;
    let mut r = rng(seed);
    let (mut worst_g, mut worst_h) = (0.0f64, 0.0f64);
    for _ in 0..cases {
        let y = u8::from(r.random_bool(0.5));
        let m = r.random_range(-20.0..20.0);
        let l = |x: f64| loss_value(y, x).unwrap();
        let p = grad_pair(y, m).unwrap();
        let fd_g = (l(m + eps) - l(m - eps)) / (2.0 * eps);
        let fd_h = (l(m + eps) - 2.0 * l(m) + l(m - eps)) / (eps * eps);
        worst_g = worst_g.max((p.g - fd_g).abs());
        worst_h = worst_h.max((p.h - fd_h).abs());
    }
    (worst_g, worst_h)
}

/// O(n^2) ROC-AUC: fraction of (positive, negative) pairs ranked correctly, ties half.
pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Random scores on `levels` equally spaced values (coarse levels create ties); the
/// first two labels are fixed so both classes appear.
pub fn random_scores(seed: u64, n: usize, pos_rate: f64, levels: u32) -> (Vec<f64>, Vec<u8>) {
    let mut r = rng(seed);
    let mut labels: Vec<u8> = (0..n).map(|_| u8::from(r.random_bool(pos_rate))).collect();
    labels[0] = 1;
    labels[1] = 0;
    let scores = (0..n).map(|_| f64::from(r.random_range(0..levels)) / f64::from(levels)).collect();
    (scores, labels)
}

/// Largest ROC-AUC deviation from the pairwise oracle and whether confusion matrices
/// matched the row loop exactly, over `cases` random inputs.
pub fn metric_oracle_check(cases: u64) -> (f64, bool) {
    let mut worst = 0.0f64;
    let mut exact = true;
    for seed in 0..cases {
        let levels = if seed % 2 == 0 { 20 } else { 1_000_000 };
        let (scores, labels) = random_scores(seed, 200, 0.1, levels);
        worst = worst.max((roc_auc(&scores, &labels).unwrap() - pairwise_auc(&scores, &labels)).abs());
        let t = 0.5;
        let mut cm = ConfusionMatrix::default();
        for (&s, &y) in scores.iter().zip(&labels) {
            match (s > t, y) {
                (true, 1) => cm.tp += 1,
                (true, _) => cm.fp += 1,
                (false, 1) => cm.fn_ += 1,
                (false, _) => cm.tn += 1,
            }
        }
        let ours = confusion(&scores, &labels, t).unwrap();
        let f = f1(&ours);
        let den = 2 * cm.tp + cm.fp + cm.fn_;
        let brute_f1 = if den == 0 { 0.0 } else { (2 * cm.tp) as f64 / den as f64 };
        exact &= ours == cm && f.f1.value == brute_f1;
    }
    (worst, exact)
}

pub fn random_hist(r: &mut StdRng, features: usize, bins: u32) -> NodeHistogramSet {
    let mut total = GradStats::ZERO;
    let mut fs = Vec::new();
    // every feature must see the same instances, so draw per-instance stats first
    let n = r.random_range(0..60);
    let inst: Vec<GradStats> = (0..n)
        .map(|_| GradStats { g: to_fixed(r.random_range(-1.0..1.0)), h: to_fixed(r.random_range(0.0..0.25)), count: 1 })
        .collect();
    for s in &inst {
        total += *s;
    }
    for f in 0..features {
        let mut dense = vec![GradStats::ZERO; bins as usize];
        for s in &inst {
            dense[r.random_range(0..bins) as usize] += *s;
        }
        let entries = dense.iter().enumerate().filter(|(_, s)| s.count > 0).map(|(b, s)| (b as u32, *s)).collect();
        fs.push(FeatureHistogram { feature: f, num_bins: bins, entries });
    }
    NodeHistogramSet { node_id: 0, features: fs, total }
}

/// Naive scan over every (feature, cut) re-deriving left/right sums from dense arrays.
pub fn brute_best(
    hist: &NodeHistogramSet,
    lambda: f64,
    gamma: f64,
    min_child: u64,
    score: impl Fn(f64, f64, f64, f64) -> f64,
) -> Option<(usize, u32, f64)> {
    let mut best: Option<(usize, u32, f64)> = None;
    for f in &hist.features {
        let dense = f.to_dense();
        for cut in 0..f.num_bins.saturating_sub(1) {
            let (mut gl, mut hl, mut nl) = (0i64, 0i64, 0u64);
            for s in &dense[..=cut as usize] {
                gl += s.g;
                hl += s.h;
                nl += s.count;
            }
            let left = GradStats { g: gl, h: hl, count: nl };
            let right = hist.total - left;
            if nl < min_child || right.count < min_child || dense[cut as usize].count == 0 {
                continue;
            }
            if left.hess() + lambda <= 0.0 || right.hess() + lambda <= 0.0 {
                continue;
            }
            let gain = score(left.grad(), left.hess(), right.grad(), right.hess());
            let accept = eq5_gain(left.grad(), left.hess(), right.grad(), right.hess(), lambda, gamma) > 0.0;
            if accept && best.map_or(true, |b| gain > b.2) {
                best = Some((f.feature, cut, gain));
            }
        }
    }
    best
}

/// Checks `cases` random histograms against a direct gain evaluator; returns every
/// mismatch.
pub fn split_oracle_mismatches(cases: u64, seed: u64) -> Vec<String> {
    let mut r = rng(seed);
    let mut failures = Vec::new();
    for case in 0..cases {
        let lambda = if case % 5 == 0 { 0.0 } else { r.random_range(0.0..3.0) };
        let gamma = if case % 2 == 0 { 0.0 } else { r.random_range(0.0..0.05) };
        let reg = Regularization { lambda, gamma };
        let hist = random_hist(&mut r, 3, 8);
        let min_child = r.random_range(1..4);
        let ours = best_split(&hist, &reg, min_child);
        let brute = brute_best(&hist, lambda, gamma, min_child, |gl, hl, gr, hr| eq5_gain(gl, hl, gr, hr, lambda, gamma));
        match (ours, brute) {
            (None, None) => {}
            (Some(s), Some((f, cut, gain))) => {
                if (s.feature, s.cut_bin) != (f, cut) || (s.gain - gain).abs() > 1e-12 || s.left + s.right != hist.total {
                    failures.push(format!("case {case}: ({}, {}, {}) vs ({f}, {cut}, {gain})", s.feature, s.cut_bin, s.gain));
                    continue;
                }
                if let Ok(w) = leaf_weight(s.left.grad(), s.left.hess(), &reg) {
                    if (w + s.left.grad() / (s.left.hess() + lambda)).abs() > 1e-12 {
                        failures.push(format!("case {case}: leaf weight {w}"));
                    }
                }
            }
            (a, b) => failures.push(format!("case {case}: {a:?} vs {b:?}")),
        }
    }
    failures
}
