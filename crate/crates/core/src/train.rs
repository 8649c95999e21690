//! Focal loss, hand-derived reverse-mode gradients through the fixed
//! architecture, Adam, and the full-batch training loop.

use std::io::Write;

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{spmm, spmm_serial, BipartiteGraph, GraphOptions};
use crate::metrics::auc;
use crate::model::{
    forward, forward_with_masks, DropoutMasks, ForwardOptions, ForwardTrace, Gradients, Mode,
    ModelDims, ModelParams, SUMMARY_WIDTH,
};
use crate::preprocess::{fit, transform, PreprocessConfig, PreprocessStats, ProcessedCohort};
use crate::schema::Cohort;

/// `p_t` is clamped here before taking its logarithm.
pub const PT_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalLoss {
    pub alpha: f64,
    pub gamma: f64,
    /// `alpha` for positives and `1 - alpha` for negatives; when false every
    /// sample is weighted by `alpha`.
    pub class_balanced: bool,
}

impl FocalLoss {
    pub fn new(alpha: f64, gamma: f64, class_balanced: bool) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Config(format!("alpha {alpha} outside (0, 1]")));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::Config(format!("gamma {gamma} must be finite and >= 0")));
        }
        Ok(Self { alpha, gamma, class_balanced })
    }

    pub fn alpha_t(&self, y: u8) -> f64 {
        if y == 1 || !self.class_balanced {
            self.alpha
        } else {
            1.0 - self.alpha
        }
    }

    /// Per-sample term `-alpha_t (1 - p_t)^gamma ln p_t`.
    pub fn term(&self, p: f64, y: u8) -> f64 {
        let pt = if y == 1 { p } else { 1.0 - p };
        -self.alpha_t(y) * (1.0 - pt).powf(self.gamma) * pt.max(PT_CLAMP).ln()
    }

    /// Derivative of [`term`](Self::term) with respect to the logit.
    pub fn grad_logit(&self, p: f64, y: u8) -> f64 {
        let (pt, sign) = if y == 1 { (p, 1.0) } else { (1.0 - p, -1.0) };
        let q = 1.0 - pt;
        sign * self.alpha_t(y) * q.powf(self.gamma) * (self.gamma * pt * pt.max(PT_CLAMP).ln() - q)
    }

    pub fn loss(&self, probs: &[f64], labels: &[u8]) -> Result<f64> {
        if probs.len() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} probabilities but {} labels",
                probs.len(),
                labels.len()
            )));
        }
        if probs.is_empty() {
            return Err(Error::Data("focal loss over an empty set".into()));
        }
        let total: f64 = probs.iter().zip(labels).map(|(&p, &y)| self.term(p, y)).sum();
        Ok(total / probs.len() as f64)
    }
}

/// Class-balanced focal loss averaged over samples.
pub fn focal_loss(probs: &[f64], labels: &[u8], alpha: f64, gamma: f64) -> Result<f64> {
    FocalLoss::new(alpha, gamma, true)?.loss(probs, labels)
}

/// Patients (rows of the forward trace) that contribute to the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Supervision {
    pub rows: Vec<usize>,
    pub labels: Vec<u8>,
}

impl Supervision {
    /// Picks `rows` out of a per-patient label vector.
    pub fn select(rows: &[usize], all_labels: &[u8]) -> Self {
        Self {
            rows: rows.to_vec(),
            labels: rows.iter().map(|&i| all_labels[i]).collect(),
        }
    }

    pub fn loss(&self, trace: &ForwardTrace, focal: &FocalLoss) -> Result<f64> {
        let probs: Vec<f64> = self.rows.iter().map(|&i| trace.probs[i]).collect();
        focal.loss(&probs, &self.labels)
    }
}

fn leaky_grad(pre: &Array2<f64>, slope: f64) -> Array2<f64> {
    pre.mapv(|v| if v > 0.0 { 1.0 } else { slope })
}

fn row_sum(m: &Array2<f64>) -> Array2<f64> {
    m.sum_axis(Axis(0)).insert_axis(Axis(0))
}

/// Loss and exact gradients for a trace produced by `forward` with the same
/// parameters. Dropout masks recorded in the trace are treated as constants
/// and the summary statistics carry no gradient.
pub fn backward(
    trace: &ForwardTrace,
    graph: &BipartiteGraph,
    processed: &ProcessedCohort,
    params: &ModelParams,
    supervision: &Supervision,
    focal: &FocalLoss,
    options: &ForwardOptions,
) -> Result<(f64, Gradients)> {
    let n = processed.n_patients();
    let nodes = graph.n_nodes();
    let d = params.w0.nrows();
    if trace.h0.dim() != (nodes, d)
        || trace.logits.len() != n
        || trace.patient_x.ncols() != params.phi_w.nrows()
        || trace.mlp_act.ncols() != params.mlp2_w.nrows()
    {
        return Err(Error::Dimension("forward trace does not match the parameters".into()));
    }
    if supervision.rows.len() != supervision.labels.len() || supervision.rows.is_empty() {
        return Err(Error::Data("supervision needs one label per row and at least one row".into()));
    }
    if let Some(&bad) = supervision.rows.iter().find(|&&i| i >= n) {
        return Err(Error::Dimension(format!("supervised row {bad} out of range")));
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
    let count = supervision.rows.len() as f64;

    let mut loss = 0.0;
    let mut dlogits = Array1::<f64>::zeros(n);
    for (&i, &y) in supervision.rows.iter().zip(&supervision.labels) {
        let p = trace.probs[i];
        loss += focal.term(p, y);
        dlogits[i] += focal.grad_logit(p, y) / count;
    }
    loss /= count;

    let mut g = ModelParams::zeros(&dims_of(params));

    // MLP head
    let dz = dlogits.insert_axis(Axis(1));
    g.mlp2_w = trace.mlp_act.t().dot(&dz);
    g.mlp2_b = row_sum(&dz);
    let dq = dz.dot(&params.mlp2_w.t()) * leaky_grad(&trace.mlp_pre, slope);
    let patients = trace.h2.slice(s![..n, ..]);
    g.mlp1_w = patients.t().dot(&dq);
    g.mlp1_b = row_sum(&dq);
    let mut dh2 = Array2::<f64>::zeros((nodes, d));
    dh2.slice_mut(s![..n, ..]).assign(&dq.dot(&params.mlp1_w.t()));

    // second layer, H2 = drop(act(Ã H1 W1)) + H1
    let mut dr2 = dh2.clone();
    if let Some(m) = &trace.masks {
        dr2 *= &m.layer2;
    }
    let dp2 = dr2 * leaky_grad(&trace.pre2, slope);
    g.w1 = trace.agg2.t().dot(&dp2);
    // Ã is symmetric, so backprop through Ã·H multiplies by Ã again
    let mut dh1 = dh2 + prop(&dp2.dot(&params.w1.t()))?;

    // first layer, H1 = drop(act(Ã H0 W0))
    if let Some(m) = &trace.masks {
        dh1 *= &m.layer1;
    }
    let dp1 = dh1 * leaky_grad(&trace.pre1, slope);
    g.w0 = trace.agg1.t().dot(&dp1);
    let dh0 = prop(&dp1.dot(&params.w0.t()))?;

    // node initializers
    let dh0_p = dh0.slice(s![..n, ..]).to_owned();
    let dh0_f = dh0.slice(s![n.., ..]).to_owned();
    g.phi_w = trace.patient_x.t().dot(&dh0_p);
    g.phi_b = row_sum(&dh0_p);
    let dx = dh0_p.dot(&params.phi_w.t());
    let cat = processed.cat_index();
    for (k, table) in g.cat_embed.iter_mut().enumerate() {
        let ce = table.ncols();
        let col = SUMMARY_WIDTH + k * ce;
        for i in 0..n {
            let mut row = table.row_mut(cat[[i, k]]);
            row += &dx.slice(s![i, col..col + ce]);
        }
    }
    g.psi_w = params.z.t().dot(&dh0_f);
    g.psi_b = row_sum(&dh0_f);
    g.z = dh0_f.dot(&params.psi_w.t());

    if !loss.is_finite() {
        return Err(Error::NonFinite("focal loss".into()));
    }
    if let Some(name) = g.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient of {name}")));
    }
    Ok((loss, g))
}

fn dims_of(params: &ModelParams) -> ModelDims {
    ModelDims {
        n_features: params.z.nrows(),
        category_sizes: params.cat_embed.iter().map(|e| e.nrows()).collect(),
        hidden: params.w0.nrows(),
        feat_embed: params.z.ncols(),
        cat_embed: params.cat_embed.first().map_or(crate::model::CATEGORY_EMBED, |e| e.ncols()),
        mlp_hidden: params.mlp1_w.ncols(),
    }
}

/// Loss of `params` with fixed dropout masks (`None` = evaluation mode).
pub fn loss_at(
    graph: &BipartiteGraph,
    processed: &ProcessedCohort,
    params: &ModelParams,
    masks: Option<DropoutMasks>,
    supervision: &Supervision,
    focal: &FocalLoss,
    options: &ForwardOptions,
) -> Result<f64> {
    let trace = forward_with_masks(graph, processed, params, masks, options)?;
    supervision.loss(&trace, focal)
}

/// Central differences `(f(x + h) - f(x - h)) / 2h` for every coordinate.
pub fn finite_diff<F>(mut f: F, theta: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut x = theta.to_vec();
    (0..x.len())
        .map(|k| {
            let orig = x[k];
            x[k] = orig + h;
            let up = f(&x);
            x[k] = orig - h;
            let down = f(&x);
            x[k] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central-difference estimate of the gradient of `loss_fn` at `params`.
pub fn finite_diff_grad<F>(mut loss_fn: F, params: &ModelParams, h: f64) -> Result<Gradients>
where
    F: FnMut(&ModelParams) -> Result<f64>,
{
    let mut probe = params.clone();
    let mut failure = None;
    let flat = finite_diff(
        |theta| {
            probe.assign_flat(theta).expect("same length");
            loss_fn(&probe).unwrap_or_else(|e| {
                failure.get_or_insert(e);
                f64::NAN
            })
        },
        &params.flatten(),
        h,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let mut out = params.clone();
    out.assign_flat(&flat)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros = ModelParams::zeros(&dims_of(params));
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.l2_norm();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for t in grads.tensors_mut() {
            t.mapv_inplace(|g| g * scale);
        }
    }
    norm
}

/// One bias-corrected Adam update, with optional global-norm clipping first.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
    clip: Option<f64>,
) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) {
        return Err(Error::Dimension("parameter, gradient and moment shapes differ".into()));
    }
    let mut clipped;
    let grads = match clip {
        Some(max_norm) => {
            clipped = grads.clone();
            clip_gradients(&mut clipped, max_norm);
            &clipped
        }
        None => grads,
    };
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powf(state.t as f64);
    let c2 = 1.0 - b2.powf(state.t as f64);
    let g_tensors = grads.named_tensors();
    let params_t = params.tensors_mut();
    let m_t = state.m.tensors_mut();
    let v_t = state.v.tensors_mut();
    for (((p, (_, g)), m), v) in params_t.into_iter().zip(g_tensors).zip(m_t).zip(v_t) {
        ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub alpha_balanced: bool,
    pub dropout_rate: f64,
    pub leaky_slope: f64,
    pub seed: u64,
    pub grad_clip: Option<f64>,
    pub early_stop_patience: usize,
    pub miss_weight: f64,
    pub hidden_dim: usize,
    /// Defaults to `ceil(hidden_dim / 2)`.
    pub mlp_hidden: Option<usize>,
    pub inductive: bool,
    pub literal_degrees: bool,
    pub stats_after_impute: bool,
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 300,
            gamma: 2.0,
            alpha: 0.25,
            alpha_balanced: true,
            dropout_rate: 0.5,
            leaky_slope: 0.01,
            seed: 0,
            grad_clip: Some(5.0),
            early_stop_patience: 50,
            miss_weight: 0.5,
            hidden_dim: 64,
            mlp_hidden: None,
            inductive: false,
            literal_degrees: false,
            stats_after_impute: false,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        FocalLoss::new(self.alpha, self.gamma, self.alpha_balanced)?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        if !(0.0..=1.0).contains(&self.miss_weight) {
            return Err(Error::Config(format!("miss_weight {} outside [0, 1]", self.miss_weight)));
        }
        if let Some(c) = self.grad_clip {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config(format!("grad_clip {c} must be positive")));
            }
        }
        if self.hidden_dim == 0 || self.mlp_hidden == Some(0) {
            return Err(Error::Config("hidden widths must be at least 1".into()));
        }
        Ok(())
    }

    pub fn focal(&self) -> FocalLoss {
        FocalLoss {
            alpha: self.alpha,
            gamma: self.gamma,
            class_balanced: self.alpha_balanced,
        }
    }

    pub fn forward_options(&self) -> ForwardOptions {
        ForwardOptions {
            dropout_rate: self.dropout_rate,
            leaky_slope: self.leaky_slope,
            serial: self.deterministic,
        }
    }

    pub fn graph_options(&self) -> GraphOptions {
        GraphOptions {
            miss_weight: self.miss_weight,
            literal_degrees: self.literal_degrees,
        }
    }

    pub fn preprocess_config(&self) -> PreprocessConfig {
        PreprocessConfig {
            stats_after_impute: self.stats_after_impute,
        }
    }

    pub fn dims(&self, processed: &ProcessedCohort) -> ModelDims {
        let mut dims = ModelDims::for_cohort(processed, self.hidden_dim);
        if let Some(h) = self.mlp_hidden {
            dims.mlp_hidden = h;
        }
        dims
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// NaN when there is no validation set.
    pub val_loss: f64,
    /// NaN when the validation set lacks a class.
    pub val_auc: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingHistory {
    pub records: Vec<EpochRecord>,
    /// Epoch whose post-update parameters were kept.
    pub best_epoch: Option<usize>,
}

impl TrainingHistory {
    /// `epoch,train_loss,val_loss,val_auc`, with `NA` for undefined values.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let fmt = |v: f64| if v.is_finite() { format!("{v:?}") } else { "NA".to_string() };
        writeln!(out, "epoch,train_loss,val_loss,val_auc")?;
        for r in &self.records {
            writeln!(out, "{},{},{},{}", r.epoch, fmt(r.train_loss), fmt(r.val_loss), fmt(r.val_auc))?;
        }
        Ok(())
    }
}

/// A trained model with everything needed to score new cohorts.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub schema_fingerprint: String,
    pub dims: ModelDims,
    pub params: ModelParams,
    pub stats: PreprocessStats,
    pub config: TrainConfig,
}

impl TrainedModel {
    /// Evaluation-mode probabilities for every patient of `cohort`, over a
    /// graph built from that cohort with the fitted statistics.
    pub fn predict(&self, cohort: &Cohort) -> Result<Vec<f64>> {
        if cohort.schema().fingerprint() != self.schema_fingerprint {
            return Err(Error::Data("cohort schema does not match the model's schema".into()));
        }
        let processed = transform(cohort, &self.stats)?;
        let graph = BipartiteGraph::build(&processed, &self.config.graph_options())?;
        let trace = forward(&graph, &processed, &self.params, Mode::Eval, &self.config.forward_options())?;
        Ok(trace.probs.to_vec())
    }
}

struct View {
    processed: ProcessedCohort,
    graph: BipartiteGraph,
    supervision: Supervision,
}

fn view(processed: &ProcessedCohort, patients: Option<&[usize]>, rows: &[usize], labels: &[u8], options: &GraphOptions) -> Result<View> {
    let (processed, supervision) = match patients {
        None => (processed.clone(), Supervision::select(rows, labels)),
        Some(subset) => {
            let local: Vec<usize> = rows
                .iter()
                .map(|r| subset.binary_search(r).expect("row within subset"))
                .collect();
            let sub_labels: Vec<u8> = subset.iter().map(|&i| labels[i]).collect();
            (processed.select_patients(subset), Supervision::select(&local, &sub_labels))
        }
    };
    let graph = BipartiteGraph::build(&processed, options)?;
    Ok(View { processed, graph, supervision })
}

/// Fits preprocessing on `train_idx`, then trains full-batch with Adam,
/// keeping the parameters with the lowest validation loss.
pub fn train(
    cohort: &Cohort,
    train_idx: &[usize],
    val_idx: &[usize],
    config: &TrainConfig,
) -> Result<(TrainedModel, TrainingHistory)> {
    config.validate()?;
    let labels = cohort
        .labels()
        .ok_or_else(|| Error::Data("training needs labels".into()))?;
    if train_idx.is_empty() {
        return Err(Error::Data("empty training split".into()));
    }
    let mut train_sorted = train_idx.to_vec();
    train_sorted.sort_unstable();
    train_sorted.dedup();
    let mut val_sorted = val_idx.to_vec();
    val_sorted.sort_unstable();
    val_sorted.dedup();
    if train_sorted.len() != train_idx.len() || val_sorted.len() != val_idx.len() {
        return Err(Error::Data("split contains repeated patients".into()));
    }
    if let Some(&i) = train_sorted.iter().chain(&val_sorted).find(|&&i| i >= cohort.n_patients()) {
        return Err(Error::Data(format!("split index {i} out of range")));
    }
    if val_sorted.iter().any(|i| train_sorted.binary_search(i).is_ok()) {
        return Err(Error::Data("training and validation splits overlap".into()));
    }
    if !train_sorted.iter().any(|&i| labels[i] == 1) {
        return Err(Error::Data("training split has no positive labels".into()));
    }

    let stats = fit(cohort, &train_sorted, config.preprocess_config())?;
    let processed = transform(cohort, &stats)?;
    let dims = config.dims(&processed);
    let mut params = ModelParams::init(&dims, config.seed)?;
    let graph_options = config.graph_options();

    let (train_view, val_view) = if config.inductive {
        let mut union: Vec<usize> = train_sorted.iter().chain(&val_sorted).copied().collect();
        union.sort_unstable();
        (
            view(&processed, Some(&train_sorted), &train_sorted, labels, &graph_options)?,
            view(&processed, Some(&union), &val_sorted, labels, &graph_options)?,
        )
    } else {
        let v = view(&processed, None, &train_sorted, labels, &graph_options)?;
        let val = View {
            supervision: Supervision::select(&val_sorted, labels),
            processed: v.processed.clone(),
            graph: v.graph.clone(),
        };
        (v, val)
    };

    let focal = config.focal();
    let fwd = config.forward_options();
    let mut state = AdamState::new(&params);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(1);
    let mut history = TrainingHistory::default();
    let mut best: Option<(f64, ModelParams)> = None;
    let has_val = !val_sorted.is_empty();

    for epoch in 0..config.epochs {
        let trace = forward(
            &train_view.graph,
            &train_view.processed,
            &params,
            Mode::Train { seed: dropout_rng.gen() },
            &fwd,
        )?;
        let (train_loss, grads) = backward(
            &trace,
            &train_view.graph,
            &train_view.processed,
            &params,
            &train_view.supervision,
            &focal,
            &fwd,
        )
        .map_err(|e| match e {
            Error::NonFinite(what) => Error::NonFinite(format!("{what} at epoch {epoch}")),
            other => other,
        })?;
        adam_step(&mut params, &grads, &mut state, config.learning_rate, config.grad_clip)?;

        let (val_loss, val_auc) = if has_val {
            let t = forward(&val_view.graph, &val_view.processed, &params, Mode::Eval, &fwd)?;
            let loss = val_view.supervision.loss(&t, &focal)?;
            let scores: Vec<f64> = val_view.supervision.rows.iter().map(|&i| t.probs[i]).collect();
            (loss, auc(&scores, &val_view.supervision.labels).unwrap_or(f64::NAN))
        } else {
            (f64::NAN, f64::NAN)
        };
        if has_val && !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss at epoch {epoch}")));
        }
        history.records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_auc,
        });

        if has_val {
            if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
                best = Some((val_loss, params.clone()));
                history.best_epoch = Some(epoch);
            } else if epoch - history.best_epoch.unwrap_or(0) >= config.early_stop_patience {
                break;
            }
        }
    }

    if let Some((_, p)) = best {
        params = p;
    } else if !history.records.is_empty() {
        history.best_epoch = Some(history.records.len() - 1);
    }

    Ok((
        TrainedModel {
            schema_fingerprint: cohort.schema().fingerprint(),
            dims,
            params,
            stats,
            config: config.clone(),
        },
        history,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn focal_examples() {
        let ce = FocalLoss::new(1.0, 0.0, false).unwrap();
        assert!((ce.loss(&[0.5], &[1]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        // 0.25 * 0.1^2 * -ln 0.9
        let oracle = 0.25 * 0.01 * -(0.9f64.ln());
        let got = focal_loss(&[0.9], &[1], 0.25, 2.0).unwrap();
        assert!((got - oracle).abs() < 1e-18);
        assert!((got - 2.6341e-4).abs() < 1e-8);
        assert!(focal_loss(&[1.0 - 1e-15], &[1], 0.25, 2.0).unwrap() < 1e-40);
        assert!(focal_loss(&[0.5], &[1, 0], 0.25, 2.0).is_err());
        assert!(FocalLoss::new(0.0, 2.0, true).is_err());
        assert!(FocalLoss::new(0.5, -1.0, true).is_err());
    }

    #[test]
    fn negatives_use_complementary_alpha() {
        let f = FocalLoss::new(0.25, 0.0, true).unwrap();
        assert!((f.term(0.3, 0) - 0.75 * -(0.7f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn grad_logit_matches_difference_quotient() {
        use crate::model::sigmoid;
        for &(alpha, gamma, balanced) in &[(0.25, 2.0, true), (1.0, 0.0, false), (0.6, 0.5, true)] {
            let f = FocalLoss::new(alpha, gamma, balanced).unwrap();
            for &z in &[-3.0, -0.2, 0.0, 0.7, 2.5] {
                for y in [0u8, 1] {
                    let h = 1e-6;
                    let fd = (f.term(sigmoid(z + h), y) - f.term(sigmoid(z - h), y)) / (2.0 * h);
                    let an = f.grad_logit(sigmoid(z), y);
                    assert!((fd - an).abs() < 1e-8 * (1.0 + an.abs()), "{alpha} {gamma} {z} {y}");
                }
            }
        }
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let dims = ModelDims::new(2, vec![], 2);
        let mut p = ModelParams::init(&dims, 0).unwrap();
        let before = p.clone();
        let g = ModelParams::zeros(&dims);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, 1e-3, None).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.m, g);
        assert_eq!(st.v, g);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let dims = ModelDims::new(1, vec![], 1);
        let mut p = ModelParams::zeros(&dims);
        let mut g = ModelParams::zeros(&dims);
        g.mlp2_b[[0, 0]] = 1.0;
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, 0.01, None).unwrap();
        // m_hat = 1, v_hat = 1 → step = lr / (1 + eps)
        let expected = -0.01 / (1.0 + 1e-8);
        assert!((p.mlp2_b[[0, 0]] - expected).abs() < 1e-15);
    }

    #[test]
    fn clipping_scales_to_max_norm() {
        let dims = ModelDims::new(1, vec![], 1);
        let mut g = ModelParams::zeros(&dims);
        g.mlp2_b[[0, 0]] = 6.0;
        g.w0[[0, 0]] = 8.0;
        let norm = clip_gradients(&mut g, 1.0);
        assert_eq!(norm, 10.0);
        assert!((g.mlp2_b[[0, 0]] - 0.6).abs() < 1e-15);
        assert!((g.w0[[0, 0]] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn finite_diff_of_quadratic() {
        let grad = finite_diff(|t| 0.5 * t[0] * t[0], &[3.0], 1e-5);
        assert!((grad[0] - 3.0).abs() < 1e-8);
        // cubic has a second-order error term: halving h quarters it
        let cubic = |t: &[f64]| t[0].powi(3);
        let err = |h: f64| (finite_diff(cubic, &[1.0], h)[0] - 3.0).abs();
        let ratio = err(1e-2) / err(5e-3);
        assert!((ratio - 4.0).abs() < 0.01, "{ratio}");
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { alpha: 1.5, ..Default::default() },
            TrainConfig { gamma: -0.1, ..Default::default() },
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { dropout_rate: 1.0, ..Default::default() },
            TrainConfig { hidden_dim: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn history_csv() {
        let h = TrainingHistory {
            records: vec![EpochRecord { epoch: 0, train_loss: 0.5, val_loss: f64::NAN, val_auc: 0.75 }],
            best_epoch: Some(0),
        };
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,train_loss,val_loss,val_auc\n0,0.5,NA,0.75\n");
    }
}
