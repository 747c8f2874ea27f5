mod common;

use common::fixture;
use estsel::data::Dataset;
use estsel::energy::{mismatch_pvalues, pairwise_distances, standardize_columns};
use estsel::estimand::{compute_weights, estimate_tau, EstimandSpec};
use estsel::grid::{evaluate_grid_with_model, GridOptions};
use estsel::propensity::{fit_propensity, DesignSpec};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn tau(data: &Dataset, scores: &[f64], spec: EstimandSpec) -> f64 {
    let w = compute_weights(scores, data.treatment(), spec, true).unwrap();
    estimate_tau(data, spec, &w).unwrap().tau_hat
}

fn spec() -> impl Strategy<Value = EstimandSpec> {
    (0.0..=1.0f64, 0.0..=1.0f64).prop_map(|(c, d)| EstimandSpec::new(c, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn label_swap_negates_tau(seed in 0u64..10_000, n in 20usize..120, s in spec()) {
        let (data, scores) = fixture(seed, n, 3);
        let flipped = data.with_flipped_treatment();
        let mirrored: Vec<f64> = scores.iter().map(|e| 1.0 - e).collect();
        let swapped = EstimandSpec::new(s.d, s.c).unwrap();
        let a = tau(&data, &scores, s);
        let b = tau(&flipped, &mirrored, swapped);
        prop_assert!((a + b).abs() < 1e-8, "{a} {b}");
    }

    #[test]
    fn label_swap_with_refit(seed in 0u64..10_000, s in spec()) {
        let (data, _) = fixture(seed, 150, 2);
        let flipped = data.with_flipped_treatment();
        let e = fit_propensity(&data, &DesignSpec::main_effects()).unwrap().predict(&data).unwrap();
        let f = fit_propensity(&flipped, &DesignSpec::main_effects()).unwrap().predict(&flipped).unwrap();
        let a = tau(&data, &e, s);
        let b = tau(&flipped, &f, EstimandSpec::new(s.d, s.c).unwrap());
        prop_assert!((a + b).abs() < 1e-6, "{a} {b}");
    }

    #[test]
    fn weights_sum_to_arm_sizes(seed in 0u64..10_000, n in 10usize..200, s in spec()) {
        let (data, scores) = fixture(seed, n, 2);
        let w = compute_weights(&scores, data.treatment(), s, true).unwrap();
        let z = data.treatment();
        for arm in [0u8, 1] {
            let total: f64 = w.w.iter().zip(z).filter(|p| *p.1 == arm).map(|p| *p.0).sum();
            let size = z.iter().filter(|&&t| t == arm).count() as f64;
            prop_assert!((total - size).abs() < 1e-9 * size);
        }
    }

    #[test]
    fn outcome_affine_map_moves_tau(seed in 0u64..10_000, s in spec(), a in -5.0..5.0f64, b in 0.1..10.0f64) {
        let (data, scores) = fixture(seed, 60, 2);
        let y2: Vec<f64> = data.outcome().iter().map(|y| a + b * y).collect();
        let moved = data.with_outcome(y2).unwrap();
        let (t, t2) = (tau(&data, &scores, s), tau(&moved, &scores, s));
        prop_assert!((t2 - b * t).abs() < 1e-9 * (1.0 + t.abs() * b));
    }

    #[test]
    fn covariate_affine_map_leaves_mismatch_statistic(seed in 0u64..10_000, shift in -3.0..3.0f64, scale in 0.2..5.0f64) {
        let (data, scores) = fixture(seed, 50, 3);
        let w = compute_weights(&scores, data.treatment(), EstimandSpec::ATO, true).unwrap().w;
        let x = data.covariates();
        let moved = x.map(|v| shift + scale * v);
        let d1 = pairwise_distances(&standardize_columns(x));
        let d2 = pairwise_distances(&standardize_columns(&moved));
        let z = data.treatment();
        let r1 = &mismatch_pvalues(&d1, z, std::slice::from_ref(&w), 20, 1, false).unwrap()[0];
        let r2 = &mismatch_pvalues(&d2, z, std::slice::from_ref(&w), 20, 1, false).unwrap()[0];
        prop_assert!((r1.control.statistic - r2.control.statistic).abs() < 1e-12);
        prop_assert!((r1.treated.statistic - r2.treated.statistic).abs() < 1e-12);
    }

    #[test]
    fn row_order_does_not_matter(seed in 0u64..10_000, s in spec(), rot in 1usize..59) {
        let (data, _) = fixture(seed, 60, 2);
        let perm: Vec<usize> = (0..60).map(|i| (i + rot) % 60).collect();
        let shuffled = data.select_rows(&perm).unwrap();
        let e = fit_propensity(&data, &DesignSpec::main_effects()).unwrap();
        let f = fit_propensity(&shuffled, &DesignSpec::main_effects()).unwrap();
        for (a, b) in e.coefficients.iter().zip(&f.coefficients) {
            prop_assert!((a - b).abs() < 1e-8);
        }
        let t1 = tau(&data, &e.predict(&data).unwrap(), s);
        let t2 = tau(&shuffled, &f.predict(&shuffled).unwrap(), s);
        prop_assert!((t1 - t2).abs() < 1e-8);
        let w1 = compute_weights(&e.predict(&data).unwrap(), data.treatment(), s, true).unwrap().w;
        let w2 = compute_weights(&f.predict(&shuffled).unwrap(), shuffled.treatment(), s, true).unwrap().w;
        let x1 = standardize_columns(data.covariates());
        let x2 = standardize_columns(shuffled.covariates());
        let (d1, d2) = (pairwise_distances(&x1), pairwise_distances(&x2));
        let m1 = &mismatch_pvalues(&d1, data.treatment(), &[w1], 10, 1, false).unwrap()[0];
        let m2 = &mismatch_pvalues(&d2, shuffled.treatment(), &[w2], 10, 1, false).unwrap()[0];
        prop_assert!((m1.control.statistic - m2.control.statistic).abs() < 1e-9);
    }
}

#[test]
fn grid_pvalues_are_probabilities() {
    let (data, _) = fixture(5, 80, 3);
    let model = fit_propensity(&data, &DesignSpec::main_effects()).unwrap();
    let opts = GridOptions {
        c_axis: vec![0.0, 0.5, 1.0],
        d_axis: vec![0.0, 0.5, 1.0],
        permutation_replicates: 40,
        bootstrap_replicates: 10,
        seed: 2,
        ..Default::default()
    };
    let out = evaluate_grid_with_model(&data, &model, &opts).unwrap();
    for r in &out.grid.rows {
        for p in [r.p_mismatch.unwrap(), r.p_statbias.unwrap()] {
            assert!((0.0..=1.0).contains(&p));
            assert_eq!((p * 40.0).round(), p * 40.0);
        }
        assert!(r.se_boot.unwrap() > 0.0);
        assert!(r.n_eff_treated > 0.0 && r.n_eff_control > 0.0);
    }
}

#[test]
fn unnormalised_weights_are_rejected() {
    let x = DMatrix::from_fn(6, 1, |i, _| i as f64);
    let dist = pairwise_distances(&x);
    let z = [0u8, 0, 0, 1, 1, 1];
    assert!(mismatch_pvalues(&dist, &z, &[vec![2.0; 6]], 10, 1, false).is_err());
}
