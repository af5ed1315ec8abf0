//! Correlation metrics against brute-force enumeration.

mod common;

use common::{brute_kendall, brute_spearman, direct_pearson, random_scores, rng};
use mambarate::metrics::{kendall_tau, mse, pearson, spearman, KendallVariant, MetricError};
use proptest::prelude::*;
use rand::Rng;

const TOL: f64 = 1e-12;

fn defined(x: &[f64], y: &[f64]) -> bool {
    let constant = |v: &[f64]| v.iter().all(|a| *a == v[0]);
    x.len() >= 2 && !constant(x) && !constant(y)
}

#[test]
fn random_vectors_match_oracles() {
    let mut r = rng(2024);
    let mut checked = 0;
    while checked < 200 {
        let n = r.gen_range(2..=8);
        let ties = checked % 2 == 0;
        let x = random_scores(&mut r, n, ties);
        let y = random_scores(&mut r, n, ties);
        if !defined(&x, &y) {
            assert_eq!(spearman(&x, &y), Err(MetricError::ConstantInput));
            assert_eq!(kendall_tau(&x, &y, KendallVariant::TauB), Err(MetricError::ConstantInput));
            continue;
        }
        let (tau_a, tau_b) = brute_kendall(&x, &y);
        assert!((spearman(&x, &y).unwrap() - brute_spearman(&x, &y)).abs() < TOL, "{x:?} {y:?}");
        assert!((kendall_tau(&x, &y, KendallVariant::TauB).unwrap() - tau_b).abs() < TOL, "{x:?} {y:?}");
        assert!((kendall_tau(&x, &y, KendallVariant::TauA).unwrap() - tau_a).abs() < TOL, "{x:?} {y:?}");
        assert!((pearson(&x, &y).unwrap() - direct_pearson(&x, &y)).abs() < TOL);
        checked += 1;
    }
}

#[test]
fn larger_inputs_match_oracles() {
    // exercises the merge-sort path beyond trivial recursion depth
    let mut r = rng(5);
    for n in [30, 100, 257] {
        for ties in [false, true] {
            let x = random_scores(&mut r, n, ties);
            let y: Vec<f64> = x.iter().map(|v| v + r.gen_range(-1.5..1.5f64)).map(|v| if ties { v.round() } else { v }).collect();
            let (tau_a, tau_b) = brute_kendall(&x, &y);
            assert!((kendall_tau(&x, &y, KendallVariant::TauB).unwrap() - tau_b).abs() < TOL);
            assert!((kendall_tau(&x, &y, KendallVariant::TauA).unwrap() - tau_a).abs() < TOL);
            assert!((spearman(&x, &y).unwrap() - brute_spearman(&x, &y)).abs() < TOL);
        }
    }
}

#[test]
fn mse_matches_formula() {
    let mut r = rng(20);
    let x = random_scores(&mut r, 20, false);
    let y = random_scores(&mut r, 20, false);
    let direct: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 20.0;
    assert!((mse(&x, &y).unwrap() - direct).abs() < TOL);
}

fn scores(ties: bool) -> impl Strategy<Value = Vec<f64>> {
    let value = if ties { (1u8..=4).prop_map(f64::from).boxed() } else { (1.0..5.0f64).boxed() };
    prop::collection::vec(value, 2..=12)
}

fn paired() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    any::<bool>()
        .prop_flat_map(scores)
        .prop_flat_map(|x| {
            let n = x.len();
            (Just(x), prop::collection::vec(1.0..5.0f64, n))
        })
        .prop_filter("correlation defined", |(x, y)| defined(x, y))
}

proptest! {
    #[test]
    fn rank_metrics_ignore_increasing_transforms((x, y) in paired()) {
        let fx: Vec<f64> = x.iter().map(|v| v.powi(3) + 2.0 * v).collect();
        let gy: Vec<f64> = y.iter().map(|v| v.ln()).collect();
        for variant in [KendallVariant::TauA, KendallVariant::TauB] {
            let base = kendall_tau(&x, &y, variant).unwrap();
            prop_assert!((kendall_tau(&fx, &gy, variant).unwrap() - base).abs() < TOL);
        }
        prop_assert!((spearman(&fx, &gy).unwrap() - spearman(&x, &y).unwrap()).abs() < TOL);
    }

    #[test]
    fn monotone_maps_give_unit_spearman(x in prop::collection::vec(-50.0..50.0f64, 2..20)) {
        prop_assume!(!x.iter().all(|v| *v == x[0]));
        let up: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let down: Vec<f64> = x.iter().map(|v| -v * 3.0).collect();
        prop_assert!((spearman(&up, &x).unwrap() - 1.0).abs() < TOL);
        prop_assert!((spearman(&down, &x).unwrap() + 1.0).abs() < TOL);
    }

    #[test]
    fn pearson_ignores_positive_affine_maps((x, y) in paired(), a in 0.1..10.0f64, b in -5.0..5.0f64) {
        let ax: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        prop_assert!((pearson(&ax, &y).unwrap() - pearson(&x, &y).unwrap()).abs() < TOL);
    }

    #[test]
    fn correlations_are_bounded_and_symmetric((x, y) in paired()) {
        for v in [
            pearson(&x, &y).unwrap(),
            spearman(&x, &y).unwrap(),
            kendall_tau(&x, &y, KendallVariant::TauB).unwrap(),
        ] {
            prop_assert!((-1.0..=1.0).contains(&v));
        }
        let sym = kendall_tau(&y, &x, KendallVariant::TauB).unwrap() - kendall_tau(&x, &y, KendallVariant::TauB).unwrap();
        prop_assert!(sym.abs() < TOL);
        prop_assert!(mse(&x, &y).unwrap() >= 0.0);
    }
}
