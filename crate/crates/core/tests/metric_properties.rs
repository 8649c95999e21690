mod common;

use ndarray::Array2;
use proptest::prelude::*;
use triplet_gcn::baselines::{knn_score, DenseDesign, DesignColumn};
use triplet_gcn::metrics::{auc, bootstrap_auc_ci, evaluate, stratified_split, youden_threshold};

fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..200).prop_flat_map(|n| {
        (
            prop::collection::vec((0i32..12).prop_map(f64::from), n),
            prop::collection::vec(0u8..=1, n),
        )
    })
    .prop_filter("both classes", |(_, y)| y.contains(&0) && y.contains(&1))
}

fn design(rows: Vec<Vec<f64>>) -> DenseDesign {
    let width = rows[0].len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let matrix = Array2::from_shape_vec((flat.len() / width, width), flat).unwrap();
    let columns = (0..width).map(|feature_id| DesignColumn { feature_id, category: None }).collect();
    DenseDesign { matrix, columns }
}

fn grid(rows: usize, cols: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec((-3i32..4).prop_map(f64::from), cols), rows)
}

proptest! {
    #[test]
    fn auc_equals_pairwise_count((s, y) in scored()) {
        prop_assert_eq!(auc(&s, &y).unwrap(), common::pairwise_auc(&s, &y));
    }

    #[test]
    fn auc_ignores_monotone_transforms((s, y) in scored()) {
        let t: Vec<f64> = s.iter().map(|x| x * x * x + 2.0 * x - 7.0).collect();
        prop_assert_eq!(auc(&s, &y).unwrap(), auc(&t, &y).unwrap());
        let neg: Vec<f64> = s.iter().map(|x| -x).collect();
        prop_assert!((auc(&s, &y).unwrap() + auc(&neg, &y).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_interval_brackets_the_estimate((s, y) in scored(), seed in any::<u64>()) {
        let point = auc(&s, &y).unwrap();
        let (lo, hi) = bootstrap_auc_ci(&s, &y, 200, seed).unwrap();
        prop_assert!(lo <= point && point <= hi);
        prop_assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
        prop_assert_eq!((lo, hi), bootstrap_auc_ci(&s, &y, 200, seed).unwrap());
    }

    #[test]
    fn stratified_split_partitions(y in prop::collection::vec(0u8..=1, 4..300), frac in 0.05f64..0.95, seed in any::<u64>()) {
        let pos = y.iter().filter(|&&v| v == 1).count();
        let neg = y.len() - pos;
        prop_assume!(pos >= 2 && neg >= 2);
        let split = stratified_split(&y, frac, seed).unwrap();
        let mut all: Vec<usize> = split.train.iter().chain(&split.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..y.len()).collect::<Vec<_>>());
        let test_pos = split.test.iter().filter(|&&i| y[i] == 1).count();
        prop_assert_eq!(test_pos, (pos as f64 * frac).round() as usize);
        prop_assert_eq!(split.test.len() - test_pos, (neg as f64 * frac).round() as usize);
    }

    #[test]
    fn youden_threshold_is_a_score((s, y) in scored()) {
        let t = youden_threshold(&s, &y).unwrap();
        prop_assert!(s.contains(&t));
    }

    #[test]
    fn knn_matches_exhaustive_sort(
        train in grid(30, 5),
        test in grid(12, 5),
        y in prop::collection::vec(0u8..=1, 30),
        k in 1usize..=30,
    ) {
        let (tr, te) = (design(train), design(test));
        let got = knn_score(&tr, &y, &te, k).unwrap();
        prop_assert_eq!(got, common::knn_exhaustive(&tr.matrix, &y, &te.matrix, k));
    }

    #[test]
    fn knn_is_invariant_to_column_and_query_order(
        train in grid(20, 4),
        test in grid(6, 4),
        y in prop::collection::vec(0u8..=1, 20),
        k in 1usize..8,
    ) {
        let base = knn_score(&design(train.clone()), &y, &design(test.clone()), k).unwrap();
        let swap = |rows: &Vec<Vec<f64>>| rows.iter().map(|r| vec![r[2], r[0], r[3], r[1]]).collect::<Vec<_>>();
        prop_assert_eq!(&knn_score(&design(swap(&train)), &y, &design(swap(&test)), k).unwrap(), &base);
        let reversed: Vec<Vec<f64>> = test.iter().rev().cloned().collect();
        let mut back = knn_score(&design(train), &y, &design(reversed), k).unwrap();
        back.reverse();
        prop_assert_eq!(back, base);
    }
}

#[test]
fn single_class_reports_na() {
    let r = evaluate(&[0.2, 0.9, 0.4], &[0, 0, 0], 0.5, 100, 0).unwrap();
    let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(json["auc"], "NA");
    assert_eq!(json["sensitivity"], "NA");
    assert!(auc(&[0.1, 0.2], &[1, 1]).is_err());
}
