mod support;

use fedboost_core::binning::{audit_anonymity, build_layout};
use fedboost_core::{BinLayoutSet, Dataset};
use proptest::prelude::*;
use rand::Rng;
use support::rng;

/// Linear scan: first bin whose upper cut is >= value.
fn scan_bin(cuts: &[f64], value: f64) -> u32 {
    cuts.iter().position(|&c| value <= c).unwrap_or(cuts.len()) as u32
}

#[test]
fn original_dimension_sized_column_at_405_bins() {
    let mut r = rng(41);
    let n = 275_665;
    let values: Vec<f64> = (0..n).map(|_| r.random_range(-50.0..50.0)).collect();
    let layout = build_layout(0, &values, 405, 1).unwrap();
    assert_eq!(layout.bins(), 405);
    assert!(layout.min_population() >= 680, "{}", layout.min_population());
    assert_eq!(layout.populations.iter().sum::<u64>(), n as u64);

    let data = Dataset::new(values, vec![0.0; n], vec!["x".into()]).unwrap();
    let rows: Vec<usize> = (0..n).collect();
    let layouts = BinLayoutSet::build(&data, &rows, 405, 500).unwrap();
    let audit = audit_anonymity(&layouts, &data).unwrap();
    assert!(audit.pass);
    assert!(audit.min_population[0] >= 680);
}

#[test]
fn ten_values_five_bins() {
    let values: Vec<f64> = (1..=10).map(f64::from).collect();
    let layout = build_layout(0, &values, 5, 2).unwrap();
    assert_eq!(layout.cuts, vec![2.5, 4.5, 6.5, 8.5]);
    assert_eq!(layout.populations, vec![2; 5]);
    assert_eq!(layout.assign(4.5).unwrap(), 1);
    assert_eq!(layout.assign(-100.0).unwrap(), 0);
    assert_eq!(layout.assign(100.0).unwrap(), 4);
    assert!(layout.assign(f64::NAN).is_err());
}

#[test]
fn audit_rejects_feature_count_mismatch() {
    let data = Dataset::new(vec![1.0, 2.0, 3.0, 4.0], vec![0.0, 1.0], vec!["a".into(), "b".into()]).unwrap();
    let layouts = BinLayoutSet::build(&data, &[0, 1], 2, 1).unwrap();
    let other = Dataset::new(vec![1.0, 2.0], vec![0.0, 1.0], vec!["a".into()]).unwrap();
    assert!(audit_anonymity(&layouts, &other).is_err());
}

proptest! {
    #[test]
    fn assignment_matches_a_linear_scan(
        values in prop::collection::vec(-100i32..100, 1..200),
        v in 1usize..40,
        probes in prop::collection::vec(-120.0f64..120.0, 1..50),
    ) {
        let values: Vec<f64> = values.into_iter().map(|x| f64::from(x) / 4.0).collect();
        let layout = build_layout(0, &values, v, 1).unwrap();
        for p in probes.iter().chain(&values).chain(&layout.cuts) {
            prop_assert_eq!(layout.assign(*p).unwrap(), scan_bin(&layout.cuts, *p));
        }
    }

    #[test]
    fn populations_respect_k_and_cover_all_values(
        values in prop::collection::vec(-50i32..50, 1..300),
        v in 1usize..30,
        k in 1u64..10,
    ) {
        let values: Vec<f64> = values.into_iter().map(f64::from).collect();
        match build_layout(0, &values, v, k) {
            Ok(layout) => {
                prop_assert!(layout.populations.iter().all(|&p| p >= k));
                prop_assert_eq!(layout.populations.iter().sum::<u64>(), values.len() as u64);
                prop_assert!(layout.cuts.windows(2).all(|w| w[0] < w[1]));
                let mut counts = vec![0u64; layout.bins()];
                for &x in &values {
                    counts[scan_bin(&layout.cuts, x) as usize] += 1;
                }
                prop_assert_eq!(&counts, &layout.populations);
            }
            Err(_) => {
                let mut distinct = values.clone();
                distinct.sort_by(f64::total_cmp);
                distinct.dedup();
                prop_assert!(v.min(distinct.len()) as u64 * k > values.len() as u64);
            }
        }
    }
}
