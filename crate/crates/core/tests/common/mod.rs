//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use triplet_gcn::ProcessedCohort;

/// Mann-Whitney count over all positive/negative pairs, ties worth one half.
pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &yi) in labels.iter().enumerate() {
        if yi != 1 {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj != 0 {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Sorts every training row by (distance, index) and averages the first `k` labels.
pub fn knn_exhaustive(train: &Array2<f64>, labels: &[u8], test: &Array2<f64>, k: usize) -> Vec<f64> {
    test.rows()
        .into_iter()
        .map(|q| {
            let mut order: Vec<(f64, usize)> = train
                .rows()
                .into_iter()
                .enumerate()
                .map(|(j, r)| (r.iter().zip(q.iter()).map(|(a, b)| (a - b) * (a - b)).sum(), j))
                .collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let k = k.min(order.len());
            order[..k].iter().map(|&(_, j)| f64::from(labels[j])).sum::<f64>() / k as f64
        })
        .collect()
}

/// `D^{-1/2} A D^{-1/2}` on a dense matrix with absolute row-sum degrees.
pub fn dense_normalize(a: &Array2<f64>) -> Array2<f64> {
    let d: Vec<f64> = a
        .axis_iter(Axis(0))
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>().max(1e-12))
        .collect();
    Array2::from_shape_fn(a.dim(), |(u, v)| a[[u, v]] / (d[u].sqrt() * d[v].sqrt()))
}

/// Whether a symmetric matrix is positive definite, by attempting a Cholesky factorization.
pub fn is_positive_definite(m: &Array2<f64>) -> bool {
    let n = m.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = m[[j, j]];
        for k in 0..j {
            diag -= l[[j, k]] * l[[j, k]];
        }
        if diag <= 0.0 {
            return false;
        }
        l[[j, j]] = diag.sqrt();
        for i in j + 1..n {
            let mut s = m[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / l[[j, j]];
        }
    }
    true
}

/// Dominant eigenvalue magnitude of a symmetric matrix by power iteration on `A^2`.
pub fn power_iteration(a: &Array2<f64>, iters: usize) -> f64 {
    let n = a.nrows();
    let mut x = ndarray::Array1::from_shape_fn(n, |i| 1.0 + (i % 7) as f64 * 0.1);
    let mut lambda = 0.0;
    for _ in 0..iters {
        let y = a.dot(&a.dot(&x));
        let norm = y.dot(&y).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = (x.dot(&y) / x.dot(&x)).sqrt();
        x = y / norm;
    }
    lambda
}

/// Lower median by full sort.
pub fn sorted_lower_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

/// Random processed cohort with nonnegative values, about `density` of them observed.
pub fn random_processed(n: usize, m: usize, density: f64, seed: u64) -> ProcessedCohort {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = Array2::from_shape_simple_fn((n, m), || rng.gen_range(0.0..3.0));
    let observed = Array2::from_shape_simple_fn((n, m), || rng.gen_bool(density));
    ProcessedCohort::from_parts(values, observed, Array2::zeros((n, 0)), vec![]).unwrap()
}

/// Random processed cohort with signed values and categorical columns.
pub fn random_mixed(n: usize, m: usize, category_sizes: &[usize], seed: u64) -> ProcessedCohort {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = Array2::from_shape_simple_fn((n, m), || rng.gen_range(-2.0..2.0));
    let observed = Array2::from_shape_simple_fn((n, m), || rng.gen_bool(0.7));
    let cat_index = Array2::from_shape_fn((n, category_sizes.len()), |(_, k)| rng.gen_range(0..category_sizes[k]));
    ProcessedCohort::from_parts(values, observed, cat_index, category_sizes.to_vec()).unwrap()
}

pub fn max_abs(m: &Array2<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}
