//! Type-specific preprocessing fitted on the training split: median
//! imputation and standardization for numeric features, effect coding for
//! binary features, and mode imputation for categorical features.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{Cohort, FeatureKind, RawValue};

/// Standard deviations below this are treated as degenerate and replaced by 1.
pub const DEGENERATE_STD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Compute mean/std after median imputation instead of over observed values.
    pub stats_after_impute: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureStats {
    Numeric { median: f64, mean: f64, std: f64 },
    Binary,
    Categorical { mode: usize },
}

impl FeatureStats {
    fn kind(&self) -> FeatureKind {
        match self {
            FeatureStats::Numeric { .. } => FeatureKind::Numeric,
            FeatureStats::Binary => FeatureKind::Binary,
            FeatureStats::Categorical { .. } => FeatureKind::Categorical,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessStats {
    pub features: Vec<FeatureStats>,
    pub fitted_on: usize,
    pub stats_after_impute: bool,
}

/// Lower median: the element at index `(n - 1) / 2` of the sorted values.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Data("median of an empty list".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[(sorted.len() - 1) / 2])
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Dense per-patient view of the raw values, `None` where missing.
fn raw_grid(cohort: &Cohort) -> Vec<Vec<Option<&RawValue>>> {
    let mut grid = vec![vec![None; cohort.schema().len()]; cohort.n_patients()];
    for t in cohort.triplets() {
        if !t.raw_value.is_missing() {
            grid[t.patient_id][t.feature_id] = Some(&t.raw_value);
        }
    }
    grid
}

pub fn fit(
    cohort: &Cohort,
    train_indices: &[usize],
    config: PreprocessConfig,
) -> Result<PreprocessStats> {
    if train_indices.is_empty() {
        return Err(Error::Data("cannot fit preprocessing on an empty training set".into()));
    }
    if let Some(&bad) = train_indices.iter().find(|&&i| i >= cohort.n_patients()) {
        return Err(Error::Data(format!("training index {bad} out of range")));
    }
    let grid = raw_grid(cohort);
    let mut features = Vec::with_capacity(cohort.schema().len());
    for spec in cohort.schema().features() {
        let observed = train_indices.iter().filter_map(|&i| grid[i][spec.id]);
        let stats = match spec.kind {
            FeatureKind::Binary => FeatureStats::Binary,
            FeatureKind::Numeric => {
                let values: Vec<f64> = observed
                    .filter_map(|v| match v {
                        RawValue::Number(x) => Some(*x),
                        _ => None,
                    })
                    .collect();
                if values.is_empty() {
                    log::warn!(
                        "numeric feature {:?} has no observed training values; using median 0, mean 0, std 1",
                        spec.name
                    );
                    FeatureStats::Numeric { median: 0.0, mean: 0.0, std: 1.0 }
                } else {
                    let med = median(&values)?;
                    let (mean, std) = if config.stats_after_impute {
                        let filled: Vec<f64> = train_indices
                            .iter()
                            .map(|&i| match grid[i][spec.id] {
                                Some(RawValue::Number(x)) => *x,
                                _ => med,
                            })
                            .collect();
                        mean_and_std(&filled)
                    } else {
                        mean_and_std(&values)
                    };
                    let std = if std < DEGENERATE_STD { 1.0 } else { std };
                    FeatureStats::Numeric { median: med, mean, std }
                }
            }
            FeatureKind::Categorical => {
                let mut counts = vec![0usize; spec.categories.len()];
                for v in observed {
                    if let RawValue::Category(c) = v {
                        counts[*c] += 1;
                    }
                }
                if counts.iter().all(|&c| c == 0) {
                    log::warn!(
                        "categorical feature {:?} has no observed training values; using category 0",
                        spec.name
                    );
                }
                // first maximum wins ties
                let mode = counts
                    .iter()
                    .enumerate()
                    .fold((0, 0), |best, (k, &c)| if c > best.1 { (k, c) } else { best })
                    .0;
                FeatureStats::Categorical { mode }
            }
        };
        features.push(stats);
    }
    Ok(PreprocessStats {
        features,
        fitted_on: train_indices.len(),
        stats_after_impute: config.stats_after_impute,
    })
}

/// One patient-feature edge of the processed cohort.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub patient: usize,
    /// Graph feature slot (not the schema id).
    pub feature: usize,
    pub value: f64,
    pub observed: bool,
}

/// Fully imputed cohort: one processed value and missingness bit per
/// (patient, non-categorical feature), plus categorical indices per patient.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedCohort {
    values: Array2<f64>,
    observed: Array2<bool>,
    cat_index: Array2<usize>,
    category_sizes: Vec<usize>,
    feature_ids: Vec<usize>,
    cat_feature_ids: Vec<usize>,
}

impl ProcessedCohort {
    /// Builds a processed cohort directly from dense arrays.
    pub fn from_parts(
        values: Array2<f64>,
        observed: Array2<bool>,
        cat_index: Array2<usize>,
        category_sizes: Vec<usize>,
    ) -> Result<Self> {
        let n = values.nrows();
        if observed.dim() != values.dim() || cat_index.nrows() != n {
            return Err(Error::Dimension("processed cohort parts disagree on shape".into()));
        }
        if cat_index.ncols() != category_sizes.len() {
            return Err(Error::Dimension(
                "categorical index width differs from the number of categorical features".into(),
            ));
        }
        for row in cat_index.rows() {
            for (&c, &size) in row.iter().zip(&category_sizes) {
                if c >= size {
                    return Err(Error::Data(format!(
                        "category index {c} out of range (size {size})"
                    )));
                }
            }
        }
        // positional ids: graph features first, then categorical features
        let m = values.ncols();
        let feature_ids = (0..m).collect();
        let cat_feature_ids = (m..m + category_sizes.len()).collect();
        Ok(Self {
            values,
            observed,
            cat_index,
            category_sizes,
            feature_ids,
            cat_feature_ids,
        })
    }

    pub fn n_patients(&self) -> usize {
        self.values.nrows()
    }

    /// Number of graph feature nodes (numeric + binary features).
    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    pub fn n_categorical(&self) -> usize {
        self.category_sizes.len()
    }

    pub fn category_sizes(&self) -> &[usize] {
        &self.category_sizes
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn observed(&self) -> &Array2<bool> {
        &self.observed
    }

    pub fn cat_index(&self) -> &Array2<usize> {
        &self.cat_index
    }

    /// Schema id of each graph feature slot.
    pub fn feature_ids(&self) -> &[usize] {
        &self.feature_ids
    }

    /// Schema id of each categorical slot.
    pub fn cat_feature_ids(&self) -> &[usize] {
        &self.cat_feature_ids
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.values
            .indexed_iter()
            .map(move |((patient, feature), &value)| Edge {
                patient,
                feature,
                value,
                observed: self.observed[[patient, feature]],
            })
    }

    /// Restricts the cohort to the given patients, in the given order.
    pub fn select_patients(&self, patients: &[usize]) -> Self {
        Self {
            values: self.values.select(ndarray::Axis(0), patients),
            observed: self.observed.select(ndarray::Axis(0), patients),
            cat_index: self.cat_index.select(ndarray::Axis(0), patients),
            category_sizes: self.category_sizes.clone(),
            feature_ids: self.feature_ids.clone(),
            cat_feature_ids: self.cat_feature_ids.clone(),
        }
    }
}

pub fn transform(cohort: &Cohort, stats: &PreprocessStats) -> Result<ProcessedCohort> {
    let schema = cohort.schema();
    if stats.features.len() != schema.len()
        || schema
            .features()
            .iter()
            .zip(&stats.features)
            .any(|(spec, st)| spec.kind != st.kind())
    {
        return Err(Error::Data(
            "preprocessing statistics do not match the cohort schema".into(),
        ));
    }
    for (spec, st) in schema.features().iter().zip(&stats.features) {
        if let FeatureStats::Categorical { mode } = st {
            if *mode >= spec.categories.len() {
                return Err(Error::Data(format!(
                    "mode {mode} out of range for feature {:?}",
                    spec.name
                )));
            }
        }
    }

    let n = cohort.n_patients();
    let feature_ids: Vec<usize> = schema.graph_features().map(|f| f.id).collect();
    let cat_ids: Vec<usize> = schema.categorical_features().map(|f| f.id).collect();
    let grid = raw_grid(cohort);

    let mut values = Array2::zeros((n, feature_ids.len()));
    let mut observed = Array2::from_elem((n, feature_ids.len()), false);
    let mut cat_index = Array2::zeros((n, cat_ids.len()));
    for i in 0..n {
        for (slot, &fid) in feature_ids.iter().enumerate() {
            let raw = grid[i][fid];
            let v = match (&stats.features[fid], raw) {
                (FeatureStats::Numeric { median, mean, std }, raw) => {
                    let x = match raw {
                        Some(RawValue::Number(x)) => *x,
                        _ => *median,
                    };
                    (x - mean) / std
                }
                (FeatureStats::Binary, Some(RawValue::Binary(true))) => 1.0,
                (FeatureStats::Binary, Some(RawValue::Binary(false))) => -1.0,
                (FeatureStats::Binary, _) => 0.0,
                (FeatureStats::Categorical { .. }, _) => unreachable!("graph slots are non-categorical"),
            };
            values[[i, slot]] = v;
            observed[[i, slot]] = raw.is_some();
        }
        for (slot, &fid) in cat_ids.iter().enumerate() {
            cat_index[[i, slot]] = match (grid[i][fid], &stats.features[fid]) {
                (Some(RawValue::Category(c)), _) => *c,
                (_, FeatureStats::Categorical { mode }) => *mode,
                _ => unreachable!("categorical slots carry categorical stats"),
            };
        }
    }

    Ok(ProcessedCohort {
        values,
        observed,
        cat_index,
        category_sizes: schema.category_sizes(),
        feature_ids,
        cat_feature_ids: cat_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{parse_schema, Triplet};

    fn schema() -> crate::schema::FeatureSchema {
        parse_schema(
            r#"{"features":[
                {"id":0,"name":"x","kind":"numeric"},
                {"id":1,"name":"b","kind":"binary"},
                {"id":2,"name":"sex","kind":"categorical","categories":["M","F"]}
            ]}"#,
        )
        .unwrap()
    }

    fn t(patient_id: usize, feature_id: usize, raw_value: RawValue) -> Triplet {
        Triplet { patient_id, feature_id, raw_value }
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(median(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 2.0);
        assert_eq!(median(&[7.0]).unwrap(), 7.0);
        assert!(median(&[]).is_err());
    }

    #[test]
    fn fit_numeric_and_categorical() {
        let cohort = Cohort::new(
            4,
            schema(),
            vec![
                t(0, 0, RawValue::Number(1.0)),
                t(1, 0, RawValue::Number(2.0)),
                t(2, 0, RawValue::Number(100.0)),
                t(3, 0, RawValue::Number(-50.0)),
                t(0, 2, RawValue::Category(0)),
                t(1, 2, RawValue::Category(0)),
                t(2, 2, RawValue::Category(1)),
                t(3, 2, RawValue::Category(1)),
            ],
            None,
        )
        .unwrap();
        // patient 3 is not in the training split
        let stats = fit(&cohort, &[0, 1, 2], PreprocessConfig::default()).unwrap();
        match stats.features[0] {
            FeatureStats::Numeric { median, .. } => assert_eq!(median, 2.0),
            _ => panic!(),
        }
        assert_eq!(stats.features[2], FeatureStats::Categorical { mode: 0 });
        assert_eq!(stats.fitted_on, 3);
    }

    #[test]
    fn degenerate_std_floors_to_one() {
        let cohort = Cohort::new(
            3,
            schema(),
            (0..3).map(|i| t(i, 0, RawValue::Number(5.0))).collect(),
            None,
        )
        .unwrap();
        let stats = fit(&cohort, &[0, 1, 2], PreprocessConfig::default()).unwrap();
        assert_eq!(stats.features[0], FeatureStats::Numeric { median: 5.0, mean: 5.0, std: 1.0 });
    }

    #[test]
    fn unobserved_feature_falls_back() {
        let cohort = Cohort::new(2, schema(), vec![], None).unwrap();
        let stats = fit(&cohort, &[0, 1], PreprocessConfig::default()).unwrap();
        assert_eq!(stats.features[0], FeatureStats::Numeric { median: 0.0, mean: 0.0, std: 1.0 });
        assert_eq!(stats.features[2], FeatureStats::Categorical { mode: 0 });
        assert!(fit(&cohort, &[], PreprocessConfig::default()).is_err());
    }

    #[test]
    fn transform_examples() {
        let cohort = Cohort::new(
            3,
            schema(),
            vec![
                t(0, 0, RawValue::Number(2.0)),
                t(0, 1, RawValue::Binary(false)),
                t(1, 1, RawValue::Binary(true)),
                t(2, 1, RawValue::Missing),
                t(1, 2, RawValue::Category(1)),
            ],
            None,
        )
        .unwrap();
        let stats = PreprocessStats {
            features: vec![
                FeatureStats::Numeric { median: 2.0, mean: 2.0, std: 1.0 },
                FeatureStats::Binary,
                FeatureStats::Categorical { mode: 0 },
            ],
            fitted_on: 3,
            stats_after_impute: false,
        };
        let p = transform(&cohort, &stats).unwrap();
        // numeric x = mean → 0, observed
        assert_eq!((p.values()[[0, 0]], p.observed()[[0, 0]]), (0.0, true));
        // numeric missing imputed to the median, which is the center
        assert_eq!((p.values()[[1, 0]], p.observed()[[1, 0]]), (0.0, false));
        assert_eq!((p.values()[[0, 1]], p.observed()[[0, 1]]), (-1.0, true));
        assert_eq!((p.values()[[1, 1]], p.observed()[[1, 1]]), (1.0, true));
        assert_eq!((p.values()[[2, 1]], p.observed()[[2, 1]]), (0.0, false));
        assert_eq!(p.cat_index().column(0).to_vec(), vec![0, 1, 0]);
        assert_eq!(p.edges().count(), 6);
    }

    #[test]
    fn transform_rejects_mismatched_stats() {
        let cohort = Cohort::new(1, schema(), vec![], None).unwrap();
        let stats = PreprocessStats {
            features: vec![FeatureStats::Binary, FeatureStats::Binary, FeatureStats::Binary],
            fitted_on: 1,
            stats_after_impute: false,
        };
        assert!(transform(&cohort, &stats).is_err());
    }

    #[test]
    fn stats_after_impute_shrinks_variance() {
        let cohort = Cohort::new(
            4,
            schema(),
            vec![t(0, 0, RawValue::Number(0.0)), t(1, 0, RawValue::Number(4.0))],
            None,
        )
        .unwrap();
        let before = fit(&cohort, &[0, 1, 2, 3], PreprocessConfig::default()).unwrap();
        let after = fit(&cohort, &[0, 1, 2, 3], PreprocessConfig { stats_after_impute: true }).unwrap();
        let std_of = |s: &PreprocessStats| match s.features[0] {
            FeatureStats::Numeric { std, .. } => std,
            _ => panic!(),
        };
        assert_eq!(std_of(&before), 2.0);
        assert!(std_of(&after) < 2.0);
    }
}
