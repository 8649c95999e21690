//! Trainable parameters and the forward pass: node initialization, two
//! graph-convolution layers (the second residual), and the MLP head.

use ndarray::{s, Array1, Array2, Axis};
use rand::distributions::{Bernoulli, Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{spmm, spmm_serial, BipartiteGraph, SparseMatrix};
use crate::preprocess::ProcessedCohort;

pub const FEATURE_EMBED: usize = 32;
pub const CATEGORY_EMBED: usize = 4;
pub const SUMMARY_WIDTH: usize = 4;
/// Probabilities are kept this far from 0 and 1.
pub const PROB_EPS: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Number of graph feature nodes (numeric + binary features).
    pub n_features: usize,
    /// Category count of each categorical feature.
    pub category_sizes: Vec<usize>,
    pub hidden: usize,
    pub feat_embed: usize,
    pub cat_embed: usize,
    pub mlp_hidden: usize,
}

impl ModelDims {
    /// Paper-default embedding widths; the MLP is `ceil(hidden / 2)` wide.
    pub fn new(n_features: usize, category_sizes: Vec<usize>, hidden: usize) -> Self {
        Self {
            n_features,
            category_sizes,
            hidden,
            feat_embed: FEATURE_EMBED,
            cat_embed: CATEGORY_EMBED,
            mlp_hidden: hidden.div_ceil(2),
        }
    }

    pub fn for_cohort(processed: &ProcessedCohort, hidden: usize) -> Self {
        Self::new(processed.n_features(), processed.category_sizes().to_vec(), hidden)
    }

    pub fn n_cat(&self) -> usize {
        self.category_sizes.len()
    }

    /// Width of the patient initializer input `[s_i || e_1 || ... || e_k]`.
    pub fn patient_input(&self) -> usize {
        SUMMARY_WIDTH + self.cat_embed * self.n_cat()
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.mlp_hidden == 0 || self.feat_embed == 0 || self.cat_embed == 0 {
            return Err(Error::Config("model widths must be at least 1".into()));
        }
        if self.category_sizes.contains(&0) {
            return Err(Error::Config("categorical features need at least one category".into()));
        }
        Ok(())
    }
}

/// All trainable tensors. Biases are stored as `1 x width` rows. The same
/// struct doubles as the gradient and Adam-moment container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Feature embeddings, `M x feat_embed`.
    pub z: Array2<f64>,
    pub psi_w: Array2<f64>,
    pub psi_b: Array2<f64>,
    /// One `|C_k| x cat_embed` table per categorical feature.
    pub cat_embed: Vec<Array2<f64>>,
    pub phi_w: Array2<f64>,
    pub phi_b: Array2<f64>,
    pub w0: Array2<f64>,
    pub w1: Array2<f64>,
    pub mlp1_w: Array2<f64>,
    pub mlp1_b: Array2<f64>,
    pub mlp2_w: Array2<f64>,
    pub mlp2_b: Array2<f64>,
}

pub type Gradients = ModelParams;

impl ModelParams {
    pub fn zeros(dims: &ModelDims) -> Self {
        let d = dims.hidden;
        Self {
            z: Array2::zeros((dims.n_features, dims.feat_embed)),
            psi_w: Array2::zeros((dims.feat_embed, d)),
            psi_b: Array2::zeros((1, d)),
            cat_embed: dims
                .category_sizes
                .iter()
                .map(|&c| Array2::zeros((c, dims.cat_embed)))
                .collect(),
            phi_w: Array2::zeros((dims.patient_input(), d)),
            phi_b: Array2::zeros((1, d)),
            w0: Array2::zeros((d, d)),
            w1: Array2::zeros((d, d)),
            mlp1_w: Array2::zeros((d, dims.mlp_hidden)),
            mlp1_b: Array2::zeros((1, dims.mlp_hidden)),
            mlp2_w: Array2::zeros((dims.mlp_hidden, 1)),
            mlp2_b: Array2::zeros((1, 1)),
        }
    }

    /// Glorot-uniform weights and embeddings, zero biases; deterministic in `seed`.
    pub fn init(dims: &ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut params = Self::zeros(dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |m: &mut Array2<f64>| {
            let (rows, cols) = m.dim();
            if rows + cols == 0 {
                return;
            }
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            m.iter_mut().for_each(|x| *x = dist.sample(&mut rng));
        };
        glorot(&mut params.z);
        glorot(&mut params.psi_w);
        for e in &mut params.cat_embed {
            glorot(e);
        }
        glorot(&mut params.phi_w);
        glorot(&mut params.w0);
        glorot(&mut params.w1);
        glorot(&mut params.mlp1_w);
        glorot(&mut params.mlp2_w);
        Ok(params)
    }

    /// Tensors with their names, in the fixed serialization order.
    pub fn named_tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = vec![
            ("z".to_string(), &self.z),
            ("psi_w".to_string(), &self.psi_w),
            ("psi_b".to_string(), &self.psi_b),
        ];
        for (k, e) in self.cat_embed.iter().enumerate() {
            out.push((format!("cat_embed_{k}"), e));
        }
        out.extend([
            ("phi_w".to_string(), &self.phi_w),
            ("phi_b".to_string(), &self.phi_b),
            ("w0".to_string(), &self.w0),
            ("w1".to_string(), &self.w1),
            ("mlp1_w".to_string(), &self.mlp1_w),
            ("mlp1_b".to_string(), &self.mlp1_b),
            ("mlp2_w".to_string(), &self.mlp2_w),
            ("mlp2_b".to_string(), &self.mlp2_b),
        ]);
        out
    }

    /// Mutable tensors in the same order as [`named_tensors`](Self::named_tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = vec![&mut self.z, &mut self.psi_w, &mut self.psi_b];
        out.extend(self.cat_embed.iter_mut());
        out.extend([
            &mut self.phi_w,
            &mut self.phi_b,
            &mut self.w0,
            &mut self.w1,
            &mut self.mlp1_w,
            &mut self.mlp1_b,
            &mut self.mlp2_w,
            &mut self.mlp2_b,
        ]);
        out
    }

    pub fn len(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for (_, t) in self.named_tensors() {
            out.extend(t.iter());
        }
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                self.len(),
                flat.len()
            )));
        }
        let mut rest = flat;
        for t in self.tensors_mut() {
            let (head, tail) = rest.split_at(t.len());
            t.iter_mut().zip(head).for_each(|(x, &v)| *x = v);
            rest = tail;
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        let a = self.named_tensors();
        let b = other.named_tensors();
        a.len() == b.len() && a.iter().zip(&b).all(|((_, x), (_, y))| x.dim() == y.dim())
    }

    pub fn l2_norm(&self) -> f64 {
        self.named_tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Name of the first tensor holding a non-finite entry.
    pub fn first_non_finite(&self) -> Option<String> {
        self.named_tensors()
            .into_iter()
            .find(|(_, t)| t.iter().any(|x| !x.is_finite()))
            .map(|(name, _)| name)
    }

    pub fn check_dims(&self, dims: &ModelDims) -> Result<()> {
        if self.same_shape(&Self::zeros(dims)) {
            Ok(())
        } else {
            Err(Error::Dimension("parameter shapes do not match the model dimensions".into()))
        }
    }
}

/// `[mean, max, min, population variance]` of one patient's processed values.
pub fn patient_summary(processed: &ProcessedCohort, i: usize) -> [f64; 4] {
    let row = processed.values().row(i);
    if row.is_empty() {
        log::warn!("patient {i} has no incident edges; summary statistics set to zero");
        return [0.0; 4];
    }
    let n = row.len() as f64;
    let mean = row.sum() / n;
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = row.iter().copied().fold(f64::INFINITY, f64::min);
    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    [mean, max, min, var]
}

pub fn summary_matrix(processed: &ProcessedCohort) -> Array2<f64> {
    let n = processed.n_patients();
    let mut out = Array2::zeros((n, SUMMARY_WIDTH));
    if processed.n_features() == 0 {
        if n > 0 {
            log::warn!("no numeric or binary features; patient summary statistics set to zero");
        }
        return out;
    }
    for i in 0..n {
        out.row_mut(i).assign(&Array1::from(patient_summary(processed, i).to_vec()));
    }
    out
}

/// Patient initializer input `[s_i || e_1(c_i1) || ... ]`, one row per patient.
pub fn patient_inputs(processed: &ProcessedCohort, summary: &Array2<f64>, params: &ModelParams) -> Result<Array2<f64>> {
    let n = processed.n_patients();
    let ce = params.cat_embed.first().map_or(CATEGORY_EMBED, |e| e.ncols());
    if params.cat_embed.len() != processed.n_categorical() {
        return Err(Error::Dimension(format!(
            "{} categorical embeddings for {} categorical features",
            params.cat_embed.len(),
            processed.n_categorical()
        )));
    }
    let mut x = Array2::zeros((n, SUMMARY_WIDTH + ce * params.cat_embed.len()));
    x.slice_mut(s![.., ..SUMMARY_WIDTH]).assign(summary);
    let cat = processed.cat_index();
    for (k, table) in params.cat_embed.iter().enumerate() {
        let col = SUMMARY_WIDTH + k * ce;
        for i in 0..n {
            let c = cat[[i, k]];
            if c >= table.nrows() {
                return Err(Error::Dimension(format!(
                    "patient {i}: category index {c} out of range for embedding {k} ({} rows)",
                    table.nrows()
                )));
            }
            x.slice_mut(s![i, col..col + ce]).assign(&table.row(c));
        }
    }
    Ok(x)
}

/// Initial node matrix: patients `phi([s_i || e(c_i)])`, features `psi(z_f)`.
pub fn init_node_matrix(processed: &ProcessedCohort, params: &ModelParams) -> Result<Array2<f64>> {
    let summary = summary_matrix(processed);
    let x = patient_inputs(processed, &summary, params)?;
    node_matrix_from_inputs(&x, params)
}

fn node_matrix_from_inputs(x: &Array2<f64>, params: &ModelParams) -> Result<Array2<f64>> {
    if x.ncols() != params.phi_w.nrows() {
        return Err(Error::Dimension(format!(
            "patient input width {} but phi expects {}",
            x.ncols(),
            params.phi_w.nrows()
        )));
    }
    let patients = x.dot(&params.phi_w) + &params.phi_b;
    let features = params.z.dot(&params.psi_w) + &params.psi_b;
    Ok(ndarray::concatenate(Axis(0), &[patients.view(), features.view()]).expect("equal widths"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Train { seed: u64 },
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForwardOptions {
    pub dropout_rate: f64,
    pub leaky_slope: f64,
    /// Run the sparse products on a single thread.
    pub serial: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            dropout_rate: 0.5,
            leaky_slope: 0.01,
            serial: false,
        }
    }
}

/// Inverted-dropout masks (entries 0 or `1 / (1 - rate)`) for both GCN layers.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    pub layer1: Array2<f64>,
    pub layer2: Array2<f64>,
}

impl DropoutMasks {
    pub fn sample(rows: usize, cols: usize, rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        let keep = Bernoulli::new(1.0 - rate).map_err(|e| Error::Config(e.to_string()))?;
        let scale = 1.0 / (1.0 - rate);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || Array2::from_shape_simple_fn((rows, cols), || if keep.sample(&mut rng) { scale } else { 0.0 });
        let layer1 = draw();
        let layer2 = draw();
        Ok(Self { layer1, layer2 })
    }
}

/// Everything the backward pass needs from a forward evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub summary: Array2<f64>,
    /// Patient initializer inputs.
    pub patient_x: Array2<f64>,
    pub h0: Array2<f64>,
    /// `Ã H0`
    pub agg1: Array2<f64>,
    /// `Ã H0 W0`, before the activation.
    pub pre1: Array2<f64>,
    pub h1: Array2<f64>,
    pub agg2: Array2<f64>,
    pub pre2: Array2<f64>,
    pub h2: Array2<f64>,
    pub mlp_pre: Array2<f64>,
    pub mlp_act: Array2<f64>,
    pub logits: Array1<f64>,
    pub probs: Array1<f64>,
    pub masks: Option<DropoutMasks>,
}

pub fn leaky_relu(x: &Array2<f64>, slope: f64) -> Array2<f64> {
    x.mapv(|v| if v > 0.0 { v } else { slope * v })
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_finite(name: &str, m: &Array2<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(name.to_string()))
    }
}

pub fn forward(
    graph: &BipartiteGraph,
    processed: &ProcessedCohort,
    params: &ModelParams,
    mode: Mode,
    options: &ForwardOptions,
) -> Result<ForwardTrace> {
    let masks = match mode {
        Mode::Eval => None,
        Mode::Train { seed } => Some(DropoutMasks::sample(
            graph.n_nodes(),
            params.w0.ncols(),
            options.dropout_rate,
            seed,
        )?),
    };
    forward_with_masks(graph, processed, params, masks, options)
}

/// Forward pass with explicit dropout masks (`None` = evaluation mode).
pub fn forward_with_masks(
    graph: &BipartiteGraph,
    processed: &ProcessedCohort,
    params: &ModelParams,
    masks: Option<DropoutMasks>,
    options: &ForwardOptions,
) -> Result<ForwardTrace> {
    let n = processed.n_patients();
    let nodes = n + processed.n_features();
    if graph.n_patients() != n || graph.n_features() != processed.n_features() {
        return Err(Error::Dimension(format!(
            "graph has {}+{} nodes, cohort has {}+{}",
            graph.n_patients(),
            graph.n_features(),
            n,
            processed.n_features()
        )));
    }
    if params.z.nrows() != processed.n_features() {
        return Err(Error::Dimension(format!(
            "{} feature embeddings for {} features",
            params.z.nrows(),
            processed.n_features()
        )));
    }
    let d = params.w0.nrows();
    if params.w0.ncols() != d || params.w1.dim() != (d, d) || params.phi_w.ncols() != d || params.psi_w.ncols() != d {
        return Err(Error::Dimension("hidden widths of phi, psi, W0 and W1 must agree".into()));
    }
    if let Some(m) = &masks {
        if m.layer1.dim() != (nodes, d) || m.layer2.dim() != (nodes, d) {
            return Err(Error::Dimension("dropout masks do not match the node matrix".into()));
        }
    }
    let a = graph.adjacency_norm();
    let prop = |h: &Array2<f64>| -> Result<Array2<f64>> {
        if options.serial {
            spmm_serial(a, h)
        } else {
            spmm(a, h)
        }
    };
    let slope = options.leaky_slope;

    let summary = summary_matrix(processed);
    let patient_x = patient_inputs(processed, &summary, params)?;
    let h0 = node_matrix_from_inputs(&patient_x, params)?;
    check_finite("initial node matrix", &h0)?;

    let agg1 = prop(&h0)?;
    let pre1 = agg1.dot(&params.w0);
    let mut h1 = leaky_relu(&pre1, slope);
    if let Some(m) = &masks {
        h1 *= &m.layer1;
    }
    check_finite("gcn layer 1", &h1)?;

    let agg2 = prop(&h1)?;
    let pre2 = agg2.dot(&params.w1);
    let mut h2 = leaky_relu(&pre2, slope);
    if let Some(m) = &masks {
        h2 *= &m.layer2;
    }
    h2 += &h1;
    check_finite("gcn layer 2", &h2)?;

    let patients = h2.slice(s![..n, ..]);
    let mlp_pre = patients.dot(&params.mlp1_w) + &params.mlp1_b;
    let mlp_act = leaky_relu(&mlp_pre, slope);
    let logits = (mlp_act.dot(&params.mlp2_w) + &params.mlp2_b).column(0).to_owned();
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("mlp head".into()));
    }
    let probs = logits.mapv(|z| sigmoid(z).clamp(PROB_EPS, 1.0 - PROB_EPS));

    Ok(ForwardTrace {
        summary,
        patient_x,
        h0,
        agg1,
        pre1,
        h1,
        agg2,
        pre2,
        h2,
        mlp_pre,
        mlp_act,
        logits,
        probs,
        masks,
    })
}

/// Builds a graph around `a_norm` for unit tests that need a hand-made Ã.
pub fn graph_with_norm(processed: &ProcessedCohort, a_norm: SparseMatrix) -> Result<BipartiteGraph> {
    BipartiteGraph::from_matrices(
        processed.n_patients(),
        processed.n_features(),
        a_norm.clone(),
        a_norm,
    )
}
