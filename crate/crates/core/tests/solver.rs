mod common;

use common::{normal_matrix, random_problem, rng};
use ksvar::kernels::KernelSpec;
use ksvar::solver::*;

fn fast(lambda: f64) -> SolverConfig {
    SolverConfig {
        rho: 1.0,
        tol_primal: 1e-9,
        tol_dual: 1e-9,
        max_iter: 50_000,
        ..SolverConfig::default()
    }
    .with_lambda(lambda)
}

#[test]
fn lambda_above_max_gives_empty_fit() {
    let mut r = rng(1);
    let (y, kms) = random_problem(3, 2, 15, &[KernelSpec::polynomial(2)], &mut r);
    let lmax = lambda_max(&y, &kms).unwrap();
    let (w, _, diag) = admm_fit(&y, &kms, &fast(10.0 * lmax)).unwrap();
    assert!(diag.converged);
    assert!(w.stacked().iter().all(|v| *v == 0.0));
    assert!((fidelity(&y, &w, &kms).unwrap() - 0.5 * y.norm_squared()).abs() < 1e-12);
    assert!(threshold_edges(&w, 0.0).edges().is_empty());
}

#[test]
fn lambda_below_max_activates_some_block() {
    let mut r = rng(2);
    let (y, kms) = random_problem(3, 1, 20, &[KernelSpec::Linear], &mut r);
    let lmax = lambda_max(&y, &kms).unwrap();
    let (w, _, _) = admm_fit(&y, &kms, &fast(0.5 * lmax)).unwrap();
    assert!(w.stacked().iter().any(|v| *v != 0.0));
    assert!(w.self_blocks_zero());
}

#[test]
fn objective_decreases_with_lambda_path() {
    let mut r = rng(3);
    let (y, kms) = random_problem(3, 1, 15, &[KernelSpec::Linear, KernelSpec::polynomial(2)], &mut r);
    let lmax = lambda_max(&y, &kms).unwrap();
    let fids: Vec<f64> = [0.5, 0.1, 0.01]
        .iter()
        .map(|f| {
            let (w, _, _) = admm_fit(&y, &kms, &fast(f * lmax)).unwrap();
            fidelity(&y, &w, &kms).unwrap()
        })
        .collect();
    assert!(fids[0] >= fids[1] - 1e-9 && fids[1] >= fids[2] - 1e-9, "{fids:?}");
}

#[test]
fn predict_agrees_with_fidelity() {
    let mut r = rng(4);
    let (y, kms) = random_problem(4, 1, 12, &[KernelSpec::polynomial(3)], &mut r);
    let (w, _, _) = admm_fit(&y, &kms, &fast(0.05)).unwrap();
    let yhat = predict(&w, &kms).unwrap();
    assert_eq!(yhat.shape(), y.shape());
    let direct = 0.5 * (&y - &yhat).norm_squared();
    assert!((direct - fidelity(&y, &w, &kms).unwrap()).abs() < 1e-12);
}

#[test]
fn ridge_shrinks_as_lambda_grows() {
    let ridge = |lambda: f64| SolverConfig {
        regularizer: Regularizer::Squared,
        ..SolverConfig::default()
    }
    .with_lambda(lambda);
    let mut r = rng(5);
    let (y, kms) = random_problem(3, 1, 15, &[KernelSpec::Linear], &mut r);
    let norms: Vec<f64> = [0.01, 1.0, 100.0]
        .iter()
        .map(|&l| ridge_fit(&y, &kms, &ridge(l)).unwrap().stacked().norm())
        .collect();
    assert!(norms[0] > norms[1] && norms[1] > norms[2], "{norms:?}");
    let w = ridge_fit(&y, &kms, &ridge(1.0)).unwrap();
    assert!(ridge_fit(&y, &kms, &SolverConfig::default()).is_err());
    assert!(w.self_blocks_zero());
}

#[test]
fn trace_has_one_record_per_iteration() {
    let mut r = rng(6);
    let (y, kms) = random_problem(2, 1, 10, &[KernelSpec::Linear], &mut r);
    let cfg = SolverConfig {
        max_iter: 37,
        tol_primal: 1e-300,
        tol_dual: 1e-300,
        ..SolverConfig::default()
    };
    let (_, _, diag) = admm_fit(&y, &kms, &cfg).unwrap();
    assert_eq!(diag.iterations, 37);
    assert!(!diag.converged);
    let text = diag.to_ndjson();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 37);
    let rec: serde_json::Value = serde_json::from_str(lines[36]).unwrap();
    assert_eq!(rec["iteration"], 37);
}

#[test]
fn cross_validation_returns_a_grid_point() {
    let mut r = rng(7);
    let (y, kms) = random_problem(3, 1, 30, &[KernelSpec::Linear], &mut r);
    let grid = [1.0, 0.1, 0.01];
    let cv = cross_validate_lambda(&y, &kms, &fast(1.0), &grid, 3).unwrap();
    assert!(grid.contains(&cv.lambda));
    assert_eq!(cv.rows.len(), grid.len());
}

#[test]
fn invalid_inputs_are_rejected() {
    let mut r = rng(8);
    let (y, kms) = random_problem(3, 1, 10, &[KernelSpec::Linear], &mut r);
    assert!(admm_fit(&y, &kms, &SolverConfig::default().with_lambda(-1.0)).is_err());
    assert!(admm_fit(&y, &kms, &SolverConfig { rho: 0.0, ..SolverConfig::default() }).is_err());
    let wrong = normal_matrix(9, 3, &mut r);
    assert!(admm_fit(&wrong, &kms, &SolverConfig::default()).is_err());
    let wrong = normal_matrix(10, 2, &mut r);
    assert!(ridge_fit(&wrong, &kms, &SolverConfig { regularizer: Regularizer::Squared, ..SolverConfig::default() }).is_err());
}
