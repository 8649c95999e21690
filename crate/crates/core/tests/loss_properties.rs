use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use triplet_gcn::model::sigmoid;
use triplet_gcn::train::focal_loss;
use triplet_gcn::FocalLoss;

fn bce(p: &[f64], y: &[u8]) -> f64 {
    p.iter()
        .zip(y)
        .map(|(&p, &y)| if y == 1 { -p.ln() } else { -(1.0 - p).ln() })
        .sum::<f64>()
        / p.len() as f64
}

#[test]
fn gamma_zero_unit_alpha_is_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let focal = FocalLoss::new(1.0, 0.0, false).unwrap();
    for _ in 0..1000 {
        let p = [rng.gen_range(1e-6..1.0 - 1e-6)];
        let y = [u8::from(rng.gen_bool(0.5))];
        assert!((focal.loss(&p, &y).unwrap() - bce(&p, &y)).abs() <= 1e-12);
    }
}

proptest! {
    #[test]
    fn loss_decreases_as_the_true_class_gains(
        a in 1e-6f64..0.999999,
        b in 1e-6f64..0.999999,
        gamma in 0.0f64..5.0,
        alpha in 0.05f64..0.95,
        y in 0u8..=1,
    ) {
        prop_assume!(a != b);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let focal = FocalLoss::new(alpha, gamma, true).unwrap();
        let as_prob = |pt: f64| if y == 1 { pt } else { 1.0 - pt };
        prop_assert!(focal.term(as_prob(hi), y) <= focal.term(as_prob(lo), y));
    }

    #[test]
    fn logit_gradient_matches_differences(z in -8.0f64..8.0, gamma in 0.0f64..4.0, y in 0u8..=1) {
        let focal = FocalLoss::new(0.25, gamma, true).unwrap();
        let h = 1e-6;
        let numeric = (focal.term(sigmoid(z + h), y) - focal.term(sigmoid(z - h), y)) / (2.0 * h);
        let analytic = focal.grad_logit(sigmoid(z), y);
        prop_assert!((numeric - analytic).abs() <= 1e-6 * (1.0 + analytic.abs()));
    }
}

#[test]
fn class_balancing_weights() {
    let l = focal_loss(&[0.9, 0.1], &[1, 0], 0.25, 2.0).unwrap();
    let expected = -(0.25 * 0.01 * 0.9f64.ln() + 0.75 * 0.01 * 0.9f64.ln()) / 2.0;
    assert!((l - expected).abs() < 1e-15);
    assert!(FocalLoss::new(0.0, 2.0, true).is_err());
    assert!(FocalLoss::new(0.5, -1.0, true).is_err());
    assert!(focal_loss(&[0.5], &[1, 0], 0.25, 2.0).is_err());
}

#[test]
fn certain_mistakes_stay_finite() {
    let focal = FocalLoss::new(0.25, 2.0, true).unwrap();
    let l = focal.loss(&[0.0, 1.0], &[1, 0]).unwrap();
    assert!(l.is_finite());
    assert!((l - 0.5 * (0.25 + 0.75) * -(1e-12f64).ln()).abs() < 1e-9);
}
