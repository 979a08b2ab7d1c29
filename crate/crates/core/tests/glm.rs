mod common;

use common::{logistic_response, random_design, rng};
use proptest::prelude::*;
use psbayes::glm::{fit_logistic_mle, logistic_grad_hess, logistic_loglik, BinaryResponse, MleOptions};

fn central_difference(beta: &[f64], j: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
    let h = 1e-5 * (1.0 + beta[j].abs());
    let mut up = beta.to_vec();
    let mut down = beta.to_vec();
    up[j] += h;
    down[j] -= h;
    (f(&up) - f(&down)) / (2.0 * h)
}

#[test]
fn gradient_matches_finite_differences_on_random_instances() {
    let mut r = rng(11);
    for instance in 0..100 {
        let q = 2 + instance % 5;
        let design = random_design(&mut r, 10 + instance % 30, q);
        let beta = common::normals(&mut r, q);
        let y = logistic_response(&mut r, &design, &beta);
        let (grad, _) = logistic_grad_hess(&beta, &design, &y).unwrap();
        let ll = |b: &[f64]| logistic_loglik(b, &design, &y).unwrap();
        for (j, &g) in grad.iter().enumerate() {
            let fd = central_difference(&beta, j, ll);
            let rel = (g - fd).abs() / g.abs().max(1.0);
            assert!(rel < 1e-6, "instance {instance}, coordinate {j}: {g} vs {fd}");
        }
    }
}

#[test]
fn hessian_matches_finite_differences_of_gradient() {
    let mut r = rng(12);
    let design = random_design(&mut r, 40, 4);
    let beta = [0.3, -0.5, 0.8, 0.1];
    let y = logistic_response(&mut r, &design, &beta);
    let (_, hess) = logistic_grad_hess(&beta, &design, &y).unwrap();
    for k in 0..4 {
        let grad_k = |b: &[f64]| logistic_grad_hess(b, &design, &y).unwrap().0[k];
        for j in 0..4 {
            let fd = central_difference(&beta, j, grad_k);
            assert!((hess[(k, j)] - fd).abs() < 1e-6 * hess[(k, j)].abs().max(1.0));
        }
    }
}

#[test]
fn mle_recovers_truth_within_three_standard_errors() {
    let mut r = rng(13);
    let truth = [-0.4, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
    let design = random_design(&mut r, 100_000, truth.len());
    let y = logistic_response(&mut r, &design, &truth);
    let fit = fit_logistic_mle(&design, &y, &MleOptions::default()).unwrap();
    let se = fit.standard_errors().unwrap();
    for j in 0..truth.len() {
        let z = (fit.coef[j] - truth[j]) / se[j];
        assert!(z.abs() < 3.0, "coefficient {j}: z = {z}");
    }
}

#[test]
fn mle_is_a_stationary_maximum() {
    let mut r = rng(14);
    let design = random_design(&mut r, 300, 3);
    let y = logistic_response(&mut r, &design, &[0.2, 1.0, -0.7]);
    let fit = fit_logistic_mle(&design, &y, &MleOptions::default()).unwrap();
    let (grad, _) = logistic_grad_hess(&fit.coef, &design, &y).unwrap();
    assert!(grad.iter().all(|g| g.abs() < 1e-8));
    let best = logistic_loglik(&fit.coef, &design, &y).unwrap();
    assert!((best - fit.loglik).abs() < 1e-9);
    for j in 0..3 {
        let mut moved = fit.coef.clone();
        moved[j] += 1e-3;
        assert!(logistic_loglik(&moved, &design, &y).unwrap() < best);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loglik_is_concave_along_segments(
        seed in any::<u64>(),
        a in prop::collection::vec(-3.0f64..3.0, 3),
        b in prop::collection::vec(-3.0f64..3.0, 3),
        t in 0.0f64..1.0,
    ) {
        let mut r = rng(seed);
        let design = random_design(&mut r, 25, 3);
        let y = common::coin_flips(&mut r, 25);
        let ll = |beta: &[f64]| logistic_loglik(beta, &design, &y).unwrap();
        let mid: Vec<f64> = a.iter().zip(&b).map(|(u, v)| t * u + (1.0 - t) * v).collect();
        let chord = t * ll(&a) + (1.0 - t) * ll(&b);
        prop_assert!(ll(&mid) >= chord - 1e-9 * (1.0 + chord.abs()));
    }

    #[test]
    fn loglik_is_never_positive(seed in any::<u64>(), beta in prop::collection::vec(-50.0f64..50.0, 2)) {
        let mut r = rng(seed);
        let design = random_design(&mut r, 12, 2);
        let y = common::coin_flips(&mut r, 12);
        let ll = logistic_loglik(&beta, &design, &y).unwrap();
        prop_assert!(ll.is_finite() && ll <= 0.0);
    }

    #[test]
    fn relabeling_outcomes_negates_coefficients(seed in any::<u64>()) {
        let mut r = rng(seed);
        let design = random_design(&mut r, 200, 3);
        let y = logistic_response(&mut r, &design, &[0.1, 0.6, -0.4]);
        let flipped = BinaryResponse::new(y.as_slice().iter().map(|v| 1 - v).collect()).unwrap();
        let opts = MleOptions::default();
        if let (Ok(a), Ok(b)) = (fit_logistic_mle(&design, &y, &opts), fit_logistic_mle(&design, &flipped, &opts)) {
            for (u, v) in a.coef.iter().zip(&b.coef) {
                prop_assert!((u + v).abs() < 1e-6);
            }
        }
    }
}
