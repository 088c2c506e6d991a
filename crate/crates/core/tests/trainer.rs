mod support;

use fedboost_core::data::{partition, shard};
use fedboost_core::protocol::{encode, Frame, ProtocolMessage};
use fedboost_core::trainer::{continue_training, sparse_update, train_initial, wrongly_classified};
use fedboost_core::{Dataset, Model, Shard, TrainConfig, TreeNode};
use rand::Rng;
use support::{imbalanced_fixture, random_fixture, rng};

fn model_bytes(m: &Model) -> Vec<u8> {
    encode(&Frame::new(0, ProtocolMessage::ModelSync(m.clone())))
}

#[test]
fn worker_count_leaves_models_byte_identical() {
    let mut r = rng(31);
    let data = imbalanced_fixture(&mut r, 1200, 5, 0.05);
    let split = partition(&data, 800, 200, 200, 7).unwrap();
    // k = 1: per-worker anonymity generalization depends on the sharding, so it is
    // left out of this comparison
    for (v, k) in [(None, 1), (Some(40), 1)] {
        let mut bytes = Vec::new();
        for workers in [1, 2, 4] {
            let cfg = TrainConfig { workers, v, k, rounds_initial: 8, rounds_update: 4, seed: 7, ..Default::default() };
            let train = shard(&split.train, workers, 7).unwrap();
            let update = shard(&split.update, workers, 8).unwrap();
            let (model, _) = train_initial(&data, &train, &cfg).unwrap();
            let (model, _) = sparse_update(&data, model, &train, &update, &cfg).unwrap();
            bytes.push(model_bytes(&model));
        }
        assert!(bytes[0] == bytes[1] && bytes[0] == bytes[2], "v={v:?}");
    }
}

#[test]
fn repeated_runs_are_identical() {
    let data = random_fixture(&mut rng(32), 300, 3);
    let shards = shard(&(0..300).collect::<Vec<_>>(), 3, 1).unwrap();
    let cfg = TrainConfig { workers: 3, rounds_initial: 6, v: Some(30), ..Default::default() };
    let a = train_initial(&data, &shards, &cfg).unwrap();
    let b = train_initial(&data, &shards, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn training_loss_falls_almost_every_round() {
    let data = imbalanced_fixture(&mut rng(33), 1000, 5, 0.1);
    let shards = shard(&(0..1000).collect::<Vec<_>>(), 2, 1).unwrap();
    let cfg = TrainConfig { workers: 2, rounds_initial: 100, v: Some(64), ..Default::default() };
    let (model, report) = train_initial(&data, &shards, &cfg).unwrap();
    assert_eq!(report.losses.len(), 100);
    assert_eq!(model.trees.len(), 100);
    assert!(report.losses[0] < std::f64::consts::LN_2);
    let rising = report.losses.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(rising * 20 <= 99, "{rising} of 99 steps increased the loss");
    assert!(model.trees.iter().all(|t| t.depth() <= 4));
}

#[test]
fn first_round_beats_ln2_on_random_fixtures() {
    for seed in 0..10 {
        let mut r = rng(100 + seed);
        let n = r.random_range(30..300);
        let data = random_fixture(&mut r, n, 3);
        if data.positives() == 0 || data.positives() == n {
            continue;
        }
        let cfg = TrainConfig { rounds_initial: 1, ..Default::default() };
        let (_, report) = train_initial(&data, &[Shard { worker_id: 0, rows: (0..n).collect() }], &cfg).unwrap();
        assert!(report.losses[0] < std::f64::consts::LN_2);
    }
}

#[test]
fn update_without_wrong_rows_equals_plain_continuation() {
    // duplicate rows far from the boundary serve as an update set the model never gets wrong
    let n = 40;
    let mut xs: Vec<f64> = (0..n).map(f64::from).collect();
    let mut ys: Vec<f64> = (0..n).map(|i| f64::from(u8::from(i >= n / 2))).collect();
    xs.extend([0.0, 1.0, 38.0, 39.0]);
    ys.extend([0.0, 0.0, 1.0, 1.0]);
    let data = Dataset::new(xs, ys, vec!["x".into()]).unwrap();
    let train = vec![Shard { worker_id: 0, rows: (0..n as usize).collect() }];
    let update = vec![Shard { worker_id: 0, rows: vec![40, 41, 42, 43] }];
    let cfg = TrainConfig { rounds_initial: 30, rounds_update: 10, max_depth: 2, ..Default::default() };
    let (model, _) = train_initial(&data, &train, &cfg).unwrap();
    assert!(wrongly_classified(&model, &data, &update[0].rows).unwrap().is_empty());
    let (updated, report) = sparse_update(&data, model.clone(), &train, &update, &cfg).unwrap();
    assert!(report.wrong_counts.iter().all(|&w| w == 0));
    let (continued, _) = continue_training(&data, model, &train, 10, &cfg).unwrap();
    assert_eq!(updated, continued);
}

#[test]
fn update_tracks_the_shrinking_wrong_set() {
    let data = imbalanced_fixture(&mut rng(34), 1500, 5, 0.08);
    let split = partition(&data, 900, 400, 200, 3).unwrap();
    let cfg = TrainConfig { rounds_initial: 5, rounds_update: 15, v: Some(32), workers: 2, ..Default::default() };
    let train = shard(&split.train, 2, 1).unwrap();
    let update = shard(&split.update, 2, 2).unwrap();
    let (model, _) = train_initial(&data, &train, &cfg).unwrap();
    let initial_wrong = wrongly_classified(&model, &data, &split.update).unwrap().len() as u64;
    let (updated, report) = sparse_update(&data, model, &train, &update, &cfg).unwrap();
    assert_eq!(report.wrong_counts.len(), 15);
    assert_eq!(report.wrong_counts[0], initial_wrong);
    assert!(report.wrong_counts.last().unwrap() < &initial_wrong);
    assert_eq!(updated.trees.len(), 20);
    // the final count matches a fresh evaluation of the model before its last tree
    let mut before_last = updated.clone();
    before_last.trees.pop();
    let recount = wrongly_classified(&before_last, &data, &split.update).unwrap().len() as u64;
    assert_eq!(*report.wrong_counts.last().unwrap(), recount);
}

#[test]
fn wrongly_classified_matches_a_row_loop() {
    let mut r = rng(35);
    let data = random_fixture(&mut r, 100, 2);
    let mut model = Model::new(2, 0.5, String::new());
    for _ in 0..5 {
        model.trees.push(TreeNode::Split {
            feature: r.random_range(0..2),
            cut: r.random_range(-2.0..3.0),
            left: Box::new(TreeNode::Leaf { weight: r.random_range(-2.0..2.0) }),
            right: Box::new(TreeNode::Leaf { weight: r.random_range(-2.0..2.0) }),
        });
    }
    let rows: Vec<usize> = (0..100).collect();
    let brute: Vec<usize> = rows
        .iter()
        .copied()
        .filter(|&i| {
            let m: f64 = model.trees.iter().map(|t| t.leaf_weight(data.row(i))).sum::<f64>() * 0.5;
            u8::from(1.0 / (1.0 + (-m).exp()) > 0.5) != data.label(i)
        })
        .collect();
    assert_eq!(wrongly_classified(&model, &data, &rows).unwrap(), brute);
}

#[test]
fn infeasible_anonymity_fails_before_training() {
    let data = random_fixture(&mut rng(36), 50, 2);
    let cfg = TrainConfig { v: Some(20), k: 5, ..Default::default() };
    let err = train_initial(&data, &[Shard { worker_id: 0, rows: (0..50).collect() }], &cfg).unwrap_err();
    assert!(matches!(err, fedboost_core::Error::AnonymityUnsatisfiable { .. }));
    assert!(train_initial(&data, &[], &TrainConfig::default()).is_err());
}
