//! Bipartite patient/feature graph: the weighted adjacency with self-loops,
//! its symmetric degree normalization, and a CSR sparse-dense product.
//!
//! Node order is fixed: patients occupy rows `0..N`, feature nodes rows
//! `N..N+M` in graph-slot order.

use std::io::{BufRead, Write};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::ProcessedCohort;

/// Degrees are floored here so `D^{-1/2}` always exists.
pub const DEGREE_FLOOR: f64 = 1e-12;

/// Compressed sparse row matrix in canonical form (strictly increasing
/// column indices within each row).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != n_rows + 1 || row_offsets[0] != 0 {
            return Err(Error::Dimension("row offsets must have n_rows + 1 entries starting at 0".into()));
        }
        if col_indices.len() != values.len() || row_offsets[n_rows] != values.len() {
            return Err(Error::Dimension("row offsets do not match the number of stored entries".into()));
        }
        for r in 0..n_rows {
            let (lo, hi) = (row_offsets[r], row_offsets[r + 1]);
            if lo > hi {
                return Err(Error::Dimension(format!("row offsets decrease at row {r}")));
            }
            let cols = &col_indices[lo..hi];
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Dimension(format!("row {r} columns are not strictly increasing")));
            }
            if cols.last().is_some_and(|&c| c >= n_cols) {
                return Err(Error::Dimension(format!("row {r} has a column index out of range")));
            }
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Builds a canonical matrix from unordered `(row, col, value)` entries.
    /// Repeated coordinates are rejected.
    pub fn from_entries(
        n_rows: usize,
        n_cols: usize,
        mut entries: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        entries.sort_by_key(|&(r, c, _)| (r, c));
        if let Some(&(r, c, _)) = entries.iter().find(|&&(r, c, _)| r >= n_rows || c >= n_cols) {
            return Err(Error::Dimension(format!("entry ({r}, {c}) out of bounds")));
        }
        if let Some(w) = entries.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(Error::Dimension(format!("repeated entry ({}, {})", w[0].0, w[0].1)));
        }
        let mut row_offsets = vec![0; n_rows + 1];
        for &(r, _, _) in &entries {
            row_offsets[r + 1] += 1;
        }
        for r in 0..n_rows {
            row_offsets[r + 1] += row_offsets[r];
        }
        let (col_indices, values) = entries.into_iter().map(|(_, c, v)| (c, v)).unzip();
        Self::new(n_rows, n_cols, row_offsets, col_indices, values)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of one row.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_offsets[r], self.row_offsets[r + 1]);
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    /// Stored value at `(r, c)`, `None` outside the sparsity pattern.
    pub fn get(&self, r: usize, c: usize) -> Option<f64> {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).ok().map(|k| vals[k])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_rows, self.n_cols));
        for (r, c, v) in self.iter() {
            out[[r, c]] = v;
        }
        out
    }

    /// True when the pattern and values equal those of the transpose exactly.
    pub fn is_symmetric(&self) -> bool {
        self.n_rows == self.n_cols && self.iter().all(|(r, c, v)| self.get(c, r) == Some(v))
    }

    /// Writes the debug dump: a `n_rows n_cols nnz` header, then one
    /// `row col value` line per stored entry.
    pub fn write_dump<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{} {} {}", self.n_rows, self.n_cols, self.nnz())?;
        for (r, c, v) in self.iter() {
            writeln!(out, "{r} {c} {v:?}")?;
        }
        Ok(())
    }

    pub fn read_dump<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Data("empty graph dump".into()))??;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Data(format!("bad dump header {header:?}")))?;
        let [n_rows, n_cols, nnz] = dims[..] else {
            return Err(Error::Data(format!("bad dump header {header:?}")));
        };
        let mut entries = Vec::with_capacity(nnz);
        for line in lines {
            let line = line?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            let parsed = match parts[..] {
                [r, c, v] => r.parse().ok().zip(c.parse().ok()).zip(v.parse().ok()),
                _ => None,
            };
            let ((r, c), v) = parsed.ok_or_else(|| Error::Data(format!("bad dump line {line:?}")))?;
            entries.push((r, c, v));
        }
        if entries.len() != nnz {
            return Err(Error::Data(format!("dump declares {nnz} entries, found {}", entries.len())));
        }
        Self::from_entries(n_rows, n_cols, entries)
    }
}

/// Sparse-dense product `A · H`. Rows are computed independently and each
/// row accumulates in ascending column order, so the parallel and serial
/// paths give bit-identical results.
pub fn spmm(a: &SparseMatrix, h: &Array2<f64>) -> Result<Array2<f64>> {
    spmm_impl(a, h, true)
}

pub fn spmm_serial(a: &SparseMatrix, h: &Array2<f64>) -> Result<Array2<f64>> {
    spmm_impl(a, h, false)
}

fn spmm_impl(a: &SparseMatrix, h: &Array2<f64>, parallel: bool) -> Result<Array2<f64>> {
    if a.n_cols != h.nrows() {
        return Err(Error::Dimension(format!(
            "spmm: sparse matrix has {} columns but dense operand has {} rows",
            a.n_cols,
            h.nrows()
        )));
    }
    let width = h.ncols();
    let h = h.as_standard_layout();
    let h = h.as_slice().expect("standard layout");
    let mut out = vec![0.0; a.n_rows * width];
    let row_kernel = |(r, out_row): (usize, &mut [f64])| {
        let (cols, vals) = a.row(r);
        for (&c, &w) in cols.iter().zip(vals) {
            let src = &h[c * width..(c + 1) * width];
            for (o, &x) in out_row.iter_mut().zip(src) {
                *o += w * x;
            }
        }
    };
    if width > 0 {
        if parallel {
            out.par_chunks_mut(width).enumerate().for_each(row_kernel);
        } else {
            out.chunks_mut(width).enumerate().for_each(row_kernel);
        }
    }
    Ok(Array2::from_shape_vec((a.n_rows, width), out).expect("shape matches buffer"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphOptions {
    /// Multiplicative discount applied to imputed edges (1 disables it).
    pub miss_weight: f64,
    /// Use signed row sums as degrees instead of absolute row sums.
    pub literal_degrees: bool,
}

impl Default for GraphOptions {
    fn default() -> Self {
        Self {
            miss_weight: 0.5,
            literal_degrees: false,
        }
    }
}

/// Weighted adjacency with unit self-loops. Imputed edges are scaled by
/// `miss_weight`; zero-valued edges stay in the pattern as explicit zeros.
pub fn build_adjacency(processed: &ProcessedCohort, miss_weight: f64) -> Result<SparseMatrix> {
    if !(0.0..=1.0).contains(&miss_weight) {
        return Err(Error::Config(format!("miss_weight {miss_weight} outside [0, 1]")));
    }
    let n = processed.n_patients();
    let m = processed.n_features();
    let nodes = n
        .checked_add(m)
        .ok_or_else(|| Error::Dimension("node count overflows".into()))?;
    let nnz = n
        .checked_mul(m)
        .and_then(|e| e.checked_mul(2))
        .and_then(|e| e.checked_add(nodes))
        .ok_or_else(|| Error::Dimension("edge count overflows".into()))?;

    let values = processed.values();
    let observed = processed.observed();
    let weight = |i: usize, f: usize| {
        let v = values[[i, f]];
        if observed[[i, f]] { v } else { miss_weight * v }
    };

    let mut row_offsets = Vec::with_capacity(nodes + 1);
    let mut col_indices = Vec::with_capacity(nnz);
    let mut vals = Vec::with_capacity(nnz);
    row_offsets.push(0);
    for i in 0..n {
        col_indices.push(i);
        vals.push(1.0);
        for f in 0..m {
            col_indices.push(n + f);
            vals.push(weight(i, f));
        }
        row_offsets.push(col_indices.len());
    }
    for f in 0..m {
        for i in 0..n {
            col_indices.push(i);
            vals.push(weight(i, f));
        }
        col_indices.push(n + f);
        vals.push(1.0);
        row_offsets.push(col_indices.len());
    }
    SparseMatrix::new(nodes, nodes, row_offsets, col_indices, vals)
}

/// Row sums of the adjacency, of absolute values unless `literal` is set;
/// floored at [`DEGREE_FLOOR`].
pub fn degree_vector(adj_hat: &SparseMatrix, literal: bool) -> Vec<f64> {
    (0..adj_hat.n_rows())
        .map(|r| {
            let (_, vals) = adj_hat.row(r);
            let d: f64 = if literal {
                vals.iter().sum()
            } else {
                vals.iter().map(|v| v.abs()).sum()
            };
            d.max(DEGREE_FLOOR)
        })
        .collect()
}

/// `D^{-1/2} Â D^{-1/2}` on the pattern of `Â`.
pub fn normalize(adj_hat: &SparseMatrix, degrees: &[f64]) -> Result<SparseMatrix> {
    if degrees.len() != adj_hat.n_rows() || adj_hat.n_rows() != adj_hat.n_cols() {
        return Err(Error::Dimension("degree vector does not match adjacency".into()));
    }
    if let Some(d) = degrees.iter().find(|&&d| d <= 0.0 || !d.is_finite()) {
        return Err(Error::Data(format!("non-positive degree {d}")));
    }
    let mut values = Vec::with_capacity(adj_hat.nnz());
    for r in 0..adj_hat.n_rows() {
        let (cols, vals) = adj_hat.row(r);
        for (&c, &v) in cols.iter().zip(vals) {
            values.push(v / (degrees[r] * degrees[c]).sqrt());
        }
    }
    Ok(SparseMatrix {
        values,
        ..adj_hat.clone()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteGraph {
    n_patients: usize,
    n_features: usize,
    adjacency_hat: SparseMatrix,
    adjacency_norm: SparseMatrix,
}

impl BipartiteGraph {
    pub fn build(processed: &ProcessedCohort, options: &GraphOptions) -> Result<Self> {
        let adjacency_hat = build_adjacency(processed, options.miss_weight)?;
        let degrees = degree_vector(&adjacency_hat, options.literal_degrees);
        let adjacency_norm = normalize(&adjacency_hat, &degrees)?;
        Ok(Self {
            n_patients: processed.n_patients(),
            n_features: processed.n_features(),
            adjacency_hat,
            adjacency_norm,
        })
    }

    /// Wraps an explicit normalized matrix; `adjacency_hat` is kept as given.
    pub fn from_matrices(
        n_patients: usize,
        n_features: usize,
        adjacency_hat: SparseMatrix,
        adjacency_norm: SparseMatrix,
    ) -> Result<Self> {
        let nodes = n_patients + n_features;
        for a in [&adjacency_hat, &adjacency_norm] {
            if a.n_rows() != nodes || a.n_cols() != nodes {
                return Err(Error::Dimension(format!(
                    "adjacency is {}x{}, expected {nodes}x{nodes}",
                    a.n_rows(),
                    a.n_cols()
                )));
            }
        }
        if !adjacency_norm.is_symmetric() {
            return Err(Error::Data("normalized adjacency is not symmetric".into()));
        }
        Ok(Self {
            n_patients,
            n_features,
            adjacency_hat,
            adjacency_norm,
        })
    }

    pub fn n_patients(&self) -> usize {
        self.n_patients
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_nodes(&self) -> usize {
        self.n_patients + self.n_features
    }

    pub fn adjacency_hat(&self) -> &SparseMatrix {
        &self.adjacency_hat
    }

    pub fn adjacency_norm(&self) -> &SparseMatrix {
        &self.adjacency_norm
    }

    /// Every off-diagonal stored entry joins exactly one patient to one feature.
    pub fn is_bipartite(&self) -> bool {
        let n = self.n_patients;
        [&self.adjacency_hat, &self.adjacency_norm]
            .iter()
            .all(|a| a.iter().all(|(u, v, _)| u == v || ((u < n) != (v < n))))
    }
}
