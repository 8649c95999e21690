//! Feature-independent tabular baseline: brute-force k-nearest neighbours on
//! the densified processed design.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::ProcessedCohort;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignColumn {
    pub feature_id: usize,
    /// Set for one-hot columns of categorical features.
    pub category: Option<usize>,
}

/// Dense patient-by-column design matrix with its column manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseDesign {
    pub matrix: Array2<f64>,
    pub columns: Vec<DesignColumn>,
}

impl DenseDesign {
    /// The given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            matrix: self.matrix.select(ndarray::Axis(0), rows),
            columns: self.columns.clone(),
        }
    }
}

/// Numeric and binary columns carry the processed values; each categorical
/// feature expands to one-hot columns.
pub fn densify(processed: &ProcessedCohort) -> DenseDesign {
    let n = processed.n_patients();
    let m = processed.n_features();
    let width = m + processed.category_sizes().iter().sum::<usize>();
    let mut columns: Vec<DesignColumn> = processed
        .feature_ids()
        .iter()
        .map(|&feature_id| DesignColumn { feature_id, category: None })
        .collect();
    for (&feature_id, &size) in processed.cat_feature_ids().iter().zip(processed.category_sizes()) {
        columns.extend((0..size).map(|c| DesignColumn { feature_id, category: Some(c) }));
    }
    let mut matrix = Array2::zeros((n, width));
    matrix.slice_mut(ndarray::s![.., ..m]).assign(processed.values());
    for i in 0..n {
        let mut offset = m;
        for (k, &size) in processed.category_sizes().iter().enumerate() {
            matrix[[i, offset + processed.cat_index()[[i, k]]]] = 1.0;
            offset += size;
        }
    }
    DenseDesign { matrix, columns }
}

/// Fraction of positives among the `k` nearest training rows (Euclidean),
/// ties in distance going to the lower training-row index.
pub fn knn_score(train_x: &DenseDesign, train_y: &[u8], test_x: &DenseDesign, k: usize) -> Result<Vec<f64>> {
    if train_x.columns != test_x.columns {
        return Err(Error::Data("train and test designs have different columns".into()));
    }
    if train_y.len() != train_x.matrix.nrows() {
        return Err(Error::Dimension(format!(
            "{} training rows but {} labels",
            train_x.matrix.nrows(),
            train_y.len()
        )));
    }
    let n_train = train_y.len();
    if k == 0 || k > n_train {
        return Err(Error::Config(format!("k = {k} must be in 1..={n_train}")));
    }
    let scores = (0..test_x.matrix.nrows())
        .into_par_iter()
        .map(|t| {
            let q = test_x.matrix.row(t);
            let mut dist: Vec<(f64, usize)> = train_x
                .matrix
                .outer_iter()
                .enumerate()
                .map(|(j, r)| (r.iter().zip(q.iter()).map(|(a, b)| (a - b) * (a - b)).sum(), j))
                .collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < n_train {
                dist.select_nth_unstable_by(k - 1, cmp);
            }
            let hits = dist[..k].iter().filter(|&&(_, j)| train_y[j] == 1).count();
            hits as f64 / k as f64
        })
        .collect();
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn design(matrix: Array2<f64>) -> DenseDesign {
        let columns = (0..matrix.ncols()).map(|f| DesignColumn { feature_id: f, category: None }).collect();
        DenseDesign { matrix, columns }
    }

    #[test]
    fn one_hot_expansion() {
        let p = ProcessedCohort::from_parts(
            array![[0.5, -1.0], [1.0, 0.0]],
            Array2::from_elem((2, 2), true),
            array![[2], [0]],
            vec![3],
        )
        .unwrap();
        let d = densify(&p);
        assert_eq!(d.matrix.ncols(), 5);
        assert_eq!(d.matrix.row(0).to_vec(), vec![0.5, -1.0, 0.0, 0.0, 1.0]);
        assert_eq!(d.matrix.row(1).slice(ndarray::s![2..]).sum(), 1.0);
        assert_eq!(d.columns[4], DesignColumn { feature_id: 2, category: Some(2) });

        let plain = ProcessedCohort::from_parts(array![[0.0, 1.0]], Array2::from_elem((1, 2), true), Array2::zeros((1, 0)), vec![]).unwrap();
        assert_eq!(densify(&plain).matrix.ncols(), 2);
    }

    #[test]
    fn knn_examples() {
        let train = design(array![[0.0, 0.0], [1.0, 1.0], [5.0, 5.0]]);
        let y = [0, 1, 0];
        let test = design(array![[1.0, 1.0], [4.0, 4.0]]);
        assert_eq!(knn_score(&train, &y, &test, 1).unwrap(), vec![1.0, 0.0]);
        let all = knn_score(&train, &y, &test, 3).unwrap();
        assert!(all.iter().all(|&s| (s - 1.0 / 3.0).abs() < 1e-15));
        assert!(knn_score(&train, &y, &test, 0).is_err());
        assert!(knn_score(&train, &y, &test, 4).is_err());
        assert!(knn_score(&train, &y, &design(array![[1.0]]), 1).is_err());
    }

    #[test]
    fn distance_ties_go_to_lower_index() {
        let train = design(array![[1.0], [-1.0]]);
        let test = design(array![[0.0]]);
        assert_eq!(knn_score(&train, &[1, 0], &test, 1).unwrap(), vec![1.0]);
        assert_eq!(knn_score(&train, &[0, 1], &test, 1).unwrap(), vec![0.0]);
    }
}
