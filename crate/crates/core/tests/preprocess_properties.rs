mod common;

use proptest::prelude::*;
use triplet_gcn::preprocess::{fit, median, transform};
use triplet_gcn::schema::{parse_schema, parse_triplets, write_triplets};
use triplet_gcn::{Cohort, FeatureKind, FeatureSchema, FeatureSpec, PreprocessConfig, RawValue, Triplet};

fn schema(kinds: &[(FeatureKind, usize)]) -> FeatureSchema {
    FeatureSchema::new(
        kinds
            .iter()
            .enumerate()
            .map(|(id, &(kind, cats))| FeatureSpec {
                id,
                name: format!("f{id}"),
                kind,
                categories: (0..cats).map(|c| format!("level {c}")).collect(),
            })
            .collect(),
    )
    .unwrap()
}

fn kind() -> impl Strategy<Value = (FeatureKind, usize)> {
    prop_oneof![
        Just((FeatureKind::Numeric, 0)),
        Just((FeatureKind::Binary, 0)),
        (1usize..5).prop_map(|c| (FeatureKind::Categorical, c)),
    ]
}

/// Random cohort over `kinds`, each cell present with probability `density`.
fn cohort(kinds: Vec<(FeatureKind, usize)>, n: usize, density: f64) -> impl Strategy<Value = Cohort> {
    let cells = n * kinds.len();
    (
        prop::collection::vec(-1e3f64..1e3, cells),
        prop::collection::vec(0.0f64..1.0, cells),
        prop::collection::vec(0usize..16, cells),
    )
        .prop_map(move |(num, keep, pick)| {
            let s = schema(&kinds);
            let mut triplets = Vec::new();
            for i in 0..n {
                for (f, &(k, cats)) in kinds.iter().enumerate() {
                    let c = i * kinds.len() + f;
                    if keep[c] >= density {
                        continue;
                    }
                    let raw_value = match k {
                        FeatureKind::Numeric => RawValue::Number(num[c]),
                        FeatureKind::Binary => RawValue::Binary(pick[c] % 2 == 1),
                        FeatureKind::Categorical => RawValue::Category(pick[c] % cats),
                    };
                    triplets.push(Triplet { patient_id: i, feature_id: f, raw_value });
                }
            }
            Cohort::new(n, s, triplets, None).unwrap()
        })
}

fn mixed_cohort(density: f64) -> impl Strategy<Value = Cohort> {
    (prop::collection::vec(kind(), 1..6), 2usize..40).prop_flat_map(move |(k, n)| cohort(k, n, density))
}

proptest! {
    #[test]
    fn median_matches_sort(values in prop::collection::vec(-1e6f64..1e6, 1..200)) {
        prop_assert_eq!(median(&values).unwrap(), common::sorted_lower_median(&values));
    }

    #[test]
    fn schema_json_round_trip(kinds in prop::collection::vec(kind(), 1..8)) {
        let s = schema(&kinds);
        let back = parse_schema(&s.to_json()).unwrap();
        prop_assert_eq!(back.fingerprint(), s.fingerprint());
        prop_assert_eq!(back, s);
    }

    #[test]
    fn triplet_csv_round_trip(c in mixed_cohort(0.7)) {
        let mut buf = Vec::new();
        write_triplets(&mut buf, &c).unwrap();
        let back = parse_triplets(&buf[..], c.schema(), c.n_patients()).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn fully_observed_numerics_are_standardized(
        n in 2usize..60,
        m in 1usize..5,
        seed_values in prop::collection::vec(-50.0f64..50.0, 300),
    ) {
        let kinds = vec![(FeatureKind::Numeric, 0); m];
        let s = schema(&kinds);
        let triplets = (0..n)
            .flat_map(|i| (0..m).map(move |f| (i, f)))
            .map(|(i, f)| Triplet {
                patient_id: i,
                feature_id: f,
                raw_value: RawValue::Number(seed_values[(i * m + f) % 300] * (1.0 + f as f64)),
            })
            .collect();
        let c = Cohort::new(n, s, triplets, None).unwrap();
        let all: Vec<usize> = (0..n).collect();
        let p = transform(&c, &fit(&c, &all, PreprocessConfig::default()).unwrap()).unwrap();
        for col in p.values().columns() {
            let raw_spread = col.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) - col.iter().fold(f64::INFINITY, |a, &b| a.min(b));
            let mean = col.sum() / n as f64;
            let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            prop_assert!(mean.abs() < 1e-9, "mean {}", mean);
            if raw_spread > 0.0 {
                prop_assert!((std - 1.0).abs() < 1e-9, "std {}", std);
            }
        }
    }

    #[test]
    fn effect_coding_and_imputation(c in mixed_cohort(0.6)) {
        let all: Vec<usize> = (0..c.n_patients()).collect();
        prop_assume!(c.schema().features().iter().all(|f| {
            c.triplets().iter().any(|t| t.feature_id == f.id)
        }));
        let p = transform(&c, &fit(&c, &all, PreprocessConfig::default()).unwrap()).unwrap();
        for (slot, f) in c.schema().graph_features().enumerate() {
            for i in 0..c.n_patients() {
                let v = p.values()[[i, slot]];
                prop_assert!(v.is_finite());
                let raw = c.triplets().iter().find(|t| t.patient_id == i && t.feature_id == f.id);
                prop_assert_eq!(p.observed()[[i, slot]], raw.is_some());
                if f.kind == FeatureKind::Binary {
                    let expected = match raw.map(|t| &t.raw_value) {
                        Some(RawValue::Binary(true)) => 1.0,
                        Some(RawValue::Binary(false)) => -1.0,
                        _ => 0.0,
                    };
                    prop_assert_eq!(v, expected);
                }
            }
        }
    }

    #[test]
    fn statistics_ignore_held_out_patients(c in mixed_cohort(0.8), bump in 1.0f64..1e4) {
        let n = c.n_patients();
        prop_assume!(n >= 4);
        let train: Vec<usize> = (0..n / 2).collect();
        let moved: Vec<Triplet> = c
            .triplets()
            .iter()
            .map(|t| match t.raw_value {
                RawValue::Number(x) if t.patient_id >= n / 2 => Triplet { raw_value: RawValue::Number(x + bump), ..t.clone() },
                _ => t.clone(),
            })
            .collect();
        let d = Cohort::new(n, c.schema().clone(), moved, None).unwrap();
        let a = fit(&c, &train, PreprocessConfig::default());
        let b = fit(&d, &train, PreprocessConfig::default());
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
        }
    }
}
