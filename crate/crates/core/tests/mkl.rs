mod common;

use common::{normal_matrix, rng};
use ksvar::kernels::{KernelSpec, DEFAULT_JITTER};
use ksvar::mkl::{expand_kernels, mkl_fit};
use ksvar::panel::{lag_view, LagOrder, TimeSeriesPanel};
use ksvar::solver::SolverConfig;

fn cfg() -> SolverConfig {
    SolverConfig {
        rho: 1.0,
        tol_primal: 1e-10,
        tol_dual: 1e-10,
        max_iter: 100_000,
        ..SolverConfig::default()
    }
    .with_lambda(0.2)
}

#[test]
fn dictionary_order_does_not_change_the_fit() {
    let mut r = rng(11);
    let panel = TimeSeriesPanel::with_default_labels(normal_matrix(25, 3, &mut r), 1.0).unwrap();
    let view = lag_view(&panel, LagOrder(1)).unwrap();
    let y = view.targets();
    let ab = [KernelSpec::Linear, KernelSpec::polynomial(2)];
    let ba = [KernelSpec::polynomial(2), KernelSpec::Linear];
    let fa = mkl_fit(y, &expand_kernels(&view, &ab, DEFAULT_JITTER, 0).unwrap(), &cfg()).unwrap();
    let fb = mkl_fit(y, &expand_kernels(&view, &ba, DEFAULT_JITTER, 0).unwrap(), &cfg()).unwrap();
    let rel = (fa.diagnostics.objective - fb.diagnostics.objective).abs() / fa.diagnostics.objective;
    assert!(rel < 1e-6, "{rel}");
    let (sa, sb) = (fa.kernel_shares(), fb.kernel_shares());
    assert!((sa[0] - sb[1]).abs() < 1e-4 && (sa[1] - sb[0]).abs() < 1e-4, "{sa:?} {sb:?}");
}

#[test]
fn shares_sum_to_one_and_attribution_is_nonzero() {
    let mut r = rng(12);
    let panel = TimeSeriesPanel::with_default_labels(normal_matrix(30, 3, &mut r), 1.0).unwrap();
    let view = lag_view(&panel, LagOrder(1)).unwrap();
    let dict: [KernelSpec; 3] = [KernelSpec::Linear, KernelSpec::polynomial(2), "gaussian:sigma=median".parse().unwrap()];
    let ex = expand_kernels(&view, &dict, DEFAULT_JITTER, 0).unwrap();
    assert_eq!(ex.scales.len(), 3);
    let fit = mkl_fit(view.targets(), &ex, &cfg().with_lambda(0.05)).unwrap();
    let rows = fit.attribution();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.block_norm > 0.0 && !(r.lag == 0 && r.i == r.j)));
    assert!((fit.kernel_shares().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let mut buf = Vec::new();
    fit.write_attribution_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), rows.len() + 1);
}

#[test]
fn singleton_dictionary_is_unscaled() {
    let mut r = rng(13);
    let panel = TimeSeriesPanel::with_default_labels(normal_matrix(20, 2, &mut r), 1.0).unwrap();
    let view = lag_view(&panel, LagOrder(2)).unwrap();
    let ex = expand_kernels(&view, &[KernelSpec::polynomial(2)], DEFAULT_JITTER, 0).unwrap();
    assert_eq!(ex.scales, vec![1.0]);
    assert!(expand_kernels(&view, &[], DEFAULT_JITTER, 0).is_err());
}
