mod common;

use triplet_gcn::graph::BipartiteGraph;
use triplet_gcn::model::{forward_with_masks, DropoutMasks};
use triplet_gcn::train::{backward, finite_diff, finite_diff_grad, loss_at, Supervision};
use triplet_gcn::{FocalLoss, ForwardOptions, GraphOptions, ModelDims, ModelParams, ProcessedCohort};

const STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;
/// Entries whose gradients are both below this are compared absolutely.
const REL_FLOOR: f64 = 1e-7;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Largest relative error per named parameter group.
fn group_errors(
    processed: &ProcessedCohort,
    labels: &[u8],
    hidden: usize,
    masks: Option<DropoutMasks>,
    focal: FocalLoss,
    seed: u64,
) -> Vec<(String, f64)> {
    let dims = ModelDims::new(processed.n_features(), processed.category_sizes().to_vec(), hidden);
    let params = ModelParams::init(&dims, seed).unwrap();
    let graph = BipartiteGraph::build(processed, &GraphOptions::default()).unwrap();
    let options = ForwardOptions { dropout_rate: 0.5, ..Default::default() };
    let rows: Vec<usize> = (0..processed.n_patients()).collect();
    let sup = Supervision::select(&rows, labels);

    let trace = forward_with_masks(&graph, processed, &params, masks.clone(), &options).unwrap();
    let (loss, analytic) = backward(&trace, &graph, processed, &params, &sup, &focal, &options).unwrap();
    let direct = loss_at(&graph, processed, &params, masks.clone(), &sup, &focal, &options).unwrap();
    assert_eq!(loss, direct);

    let numeric = finite_diff_grad(
        |p| loss_at(&graph, processed, p, masks.clone(), &sup, &focal, &options),
        &params,
        STEP,
    )
    .unwrap();
    analytic
        .named_tensors()
        .into_iter()
        .zip(numeric.named_tensors())
        .map(|((name, a), (_, n))| {
            let worst = a.iter().zip(n.iter()).map(|(&x, &y)| rel_err(x, y)).fold(0.0, f64::max);
            (name, worst)
        })
        .collect()
}

fn assert_all_within(errors: &[(String, f64)]) {
    for (name, err) in errors {
        assert!(*err < TOLERANCE, "{name}: relative error {err:e}");
    }
}

#[test]
fn three_patients_two_features_eval_mode() {
    let p = common::random_mixed(3, 2, &[], 11);
    let errors = group_errors(&p, &[1, 0, 1], 4, None, FocalLoss::new(0.25, 2.0, true).unwrap(), 3);
    assert!(errors.len() >= 10);
    assert_all_within(&errors);
}

#[test]
fn three_patients_two_features_with_dropout() {
    let p = common::random_mixed(3, 2, &[], 5);
    let masks = DropoutMasks::sample(5, 4, 0.5, 9).unwrap();
    let errors = group_errors(&p, &[0, 1, 1], 4, Some(masks), FocalLoss::new(0.25, 2.0, true).unwrap(), 4);
    assert_all_within(&errors);
}

#[test]
fn categorical_embeddings_and_other_losses() {
    let p = common::random_mixed(5, 3, &[3, 2], 21);
    for (focal, seed) in [
        (FocalLoss::new(0.25, 2.0, true).unwrap(), 1),
        (FocalLoss::new(1.0, 0.0, false).unwrap(), 2),
        (FocalLoss::new(0.6, 1.0, true).unwrap(), 3),
    ] {
        let errors = group_errors(&p, &[1, 0, 0, 1, 0], 6, None, focal, seed);
        assert!(errors.iter().any(|(n, _)| n.starts_with("cat_embed")));
        assert_all_within(&errors);
    }
}

#[test]
fn finite_diff_on_a_quadratic() {
    let g = finite_diff(|x| x[0] * x[0] + 3.0 * x[0] * x[1], &[1.0, 2.0], 1e-5);
    assert!((g[0] - 8.0).abs() < 1e-8);
    assert!((g[1] - 3.0).abs() < 1e-8);
}
