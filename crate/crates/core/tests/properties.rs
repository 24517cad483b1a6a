#[path = "../src/testutil.rs"]
mod testutil;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rappca_core::data::Dataset;
use rappca_core::engines::{
    classical_pca_fit, fit_model, objective_value, polar_perturbation_check, project_scores, rappca_fit,
    rappca_solve_component, Hyperparams, MethodConfig, ModelSpace, Preprocess,
};
use rappca_core::metrics::compute_metrics;
use rappca_core::predictors::{rf_fit, rf_predict, ForestParams};
use rappca_core::splines::build_tprs;
use rappca_core::tuning::make_folds;
use rappca_core::{Execution, KernelSpec};
use testutil::{random_coords, random_matrix};

fn same_up_to_sign(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm().min((a + b).norm())
}

fn dataset(n: usize, p: usize, d: usize, seed: u64) -> Dataset {
    Dataset::new(random_coords(n, seed), Some(random_matrix(n, d, seed + 1)), random_matrix(n, p, seed + 2)).unwrap()
}

fn hyper() -> impl Strategy<Value = Hyperparams> {
    (0.0f64..6.0, 0.05f64..5.0, 0.05f64..5.0).prop_map(|(g, l1, rho)| Hyperparams::new(g, l1, l1 * rho))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn zero_hyperparameters_reduce_to_pca(seed in 0u64..10_000, n in 8usize..25, p in 2usize..6) {
        let data = dataset(n, p, 2, seed);
        let r = p.min(3);
        let basis = build_tprs(&data.coords, n.min(12)).unwrap();
        let rap = rappca_fit(&data, KernelSpec::Linear, &basis, &vec![Hyperparams::zero(); r], r).unwrap();
        let pca = classical_pca_fit(&data.outcomes, r, Preprocess::Standardize).unwrap();
        for l in 0..r {
            prop_assert!(same_up_to_sign(&rap.components[l].v, &pca.components[l].v) < 1e-8);
        }
    }

    #[test]
    fn loadings_unit_and_scores_consistent(seed in 0u64..10_000, h in hyper()) {
        let data = dataset(15, 4, 3, seed);
        let basis = build_tprs(&data.coords, 10).unwrap();
        let m = rappca_fit(&data, KernelSpec::Polynomial { degree: 2 }, &basis, &[h, h], 2).unwrap();
        let ys = m.standardize(&data.outcomes).unwrap();
        for c in &m.components {
            prop_assert!((c.v.norm() - 1.0).abs() < 1e-10);
        }
        prop_assert!((project_scores(&ys, &m).unwrap() - &m.scores).amax() < 1e-12);
    }

    #[test]
    fn deflation_residual_is_nonincreasing(seed in 0u64..10_000, h in hyper()) {
        let data = dataset(14, 5, 2, seed);
        let basis = build_tprs(&data.coords, 8).unwrap();
        let m = rappca_fit(&data, KernelSpec::Linear, &basis, &[h; 4], 4).unwrap();
        let mut resid = m.standardize(&data.outcomes).unwrap();
        let mut prev = resid.norm();
        for c in &m.components {
            resid -= &c.u * c.v.transpose();
            prop_assert!(resid.norm() <= prev + 1e-10);
            prev = resid.norm();
        }
    }

    #[test]
    fn solver_beats_perturbations(seed in 0u64..10_000, h in hyper()) {
        let coords = random_coords(12, seed);
        let x = random_matrix(12, 2, seed + 1);
        let y = random_matrix(12, 3, seed + 2);
        let basis = build_tprs(&coords, 6).unwrap();
        let space = ModelSpace::from_parts(&KernelSpec::Linear, Some(&x), &basis).unwrap();
        let c = rappca_solve_component(&y, &space, &h).unwrap();
        let curve = polar_perturbation_check(&y, &c, space.kernel(), space.basis(), space.penalty(), &h, 72).unwrap();
        prop_assert!(curve.min() >= -1e-8 * c.objective.max(1.0));
        // random unit loadings with the solver's α, β cannot do better either
        for s in 0..20u64 {
            let v = testutil::random_unit(3, seed * 31 + s);
            let f = objective_value(&y, &v, &c.alpha, &c.beta, space.kernel(), space.basis(), space.penalty(), &h).unwrap();
            prop_assert!(f >= c.objective - 1e-8 * c.objective.max(1.0));
        }
    }

    #[test]
    fn pca_loadings_are_scale_equivariant(seed in 0u64..10_000, scale in 0.01f64..100.0) {
        let y = random_matrix(10, 4, seed);
        let a = classical_pca_fit(&y, 2, Preprocess::Raw).unwrap();
        let b = classical_pca_fit(&(&y * scale), 2, Preprocess::Raw).unwrap();
        for l in 0..2 {
            prop_assert!(same_up_to_sign(&a.components[l].v, &b.components[l].v) < 1e-8);
        }
    }

    #[test]
    fn metrics_are_nonnegative_and_pythagorean(seed in 0u64..10_000, r in 1usize..4) {
        let y = random_matrix(20, 4, seed);
        let yt = random_matrix(7, 4, seed + 1);
        let m = classical_pca_fit(&y, r, Preprocess::Raw).unwrap();
        let uh = random_matrix(7, r, seed + 2);
        let rep = compute_metrics(&yt, &m.loadings, &uh, &y, &m.scores).unwrap();
        prop_assert!(rep.values().iter().all(|&v| v >= 0.0));
        prop_assert!((rep.tmse - rep.mspe - rep.msre_tst).abs() <= 1e-8 * rep.tmse);
    }

    #[test]
    fn folds_partition(n in 4usize..200, k in 2usize..10, seed in 0u64..1000) {
        prop_assume!(k <= n);
        let f = make_folds(n, k, seed).unwrap();
        let mut all = f.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert!(f.iter().all(|x| !x.is_empty()));
    }

    #[test]
    fn forest_is_deterministic_and_constant_invariant(seed in 0u64..10_000, c in -5.0f64..5.0) {
        let x = random_matrix(30, 3, seed);
        let params = ForestParams { n_trees: 10, seed, ..Default::default() };
        let yc = DVector::from_element(30, c);
        let f = rf_fit(&x, &yc, &params, Execution::Sequential).unwrap();
        prop_assert!(rf_predict(&f, &random_matrix(5, 3, seed + 1)).unwrap().iter().all(|&v| (v - c).abs() < 1e-12));
        let y = x.column(0).map(|v| v * v);
        let a = rf_fit(&x, &y, &params, Execution::Sequential).unwrap();
        let b = rf_fit(&x, &y, &params, Execution::Parallel).unwrap();
        let q = random_matrix(6, 3, seed + 2);
        prop_assert_eq!(rf_predict(&a, &q).unwrap(), rf_predict(&b, &q).unwrap());
    }
}

#[test]
fn all_zero_fit_model_matches_classical() {
    let data = dataset(20, 5, 3, 77);
    let rap = fit_model(&data, &MethodConfig::rappca(KernelSpec::Linear, vec![Hyperparams::zero()]), 3).unwrap();
    let pca = fit_model(&data, &MethodConfig::Classical, 3).unwrap();
    assert!((rap.scores.abs() - pca.scores.abs()).amax() < 1e-8);
}

#[test]
fn project_scores_examples() {
    let data = dataset(12, 4, 2, 5);
    let m = fit_model(&data, &MethodConfig::Classical, 1).unwrap();
    let zero = DMatrix::zeros(1, 4);
    assert_eq!(project_scores(&zero, &m).unwrap(), DMatrix::zeros(1, 1));
    let ynew = random_matrix(6, 4, 9);
    let s = project_scores(&ynew, &m).unwrap();
    for i in 0..6 {
        let mut dot = 0.0;
        for j in 0..4 {
            dot += ynew[(i, j)] * m.loadings[(j, 0)];
        }
        assert!((dot - s[(i, 0)]).abs() < 1e-12);
    }
    assert!(project_scores(&random_matrix(2, 3, 1), &m).is_err());
}
