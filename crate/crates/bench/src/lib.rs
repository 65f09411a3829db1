//! Fixtures shared by the benches.

use ksvar::kernels::{KernelMatrixSet, KernelSpec, DEFAULT_JITTER};
use ksvar::panel::{lag_view, standardize, LagOrder};
use ksvar::synth::{generate_truth, simulate};
use ksvar::SynthConfig;
use nalgebra::DMatrix;

/// Standardized synthetic panel of `n` nodes with `t_eff` target rows at lag 1, and its Grams.
pub fn problem(n: usize, t_eff: usize, kernel: KernelSpec, seed: u64) -> (DMatrix<f64>, KernelMatrixSet) {
    let density = (2.0 / n as f64).min(0.5);
    let cfg = SynthConfig::new(n, t_eff + 1, 1, density, seed);
    let truth = generate_truth(&cfg).expect("valid synthetic config");
    let panel = standardize(&simulate(&truth, &cfg).expect("simulation")).expect("nonconstant series");
    let view = lag_view(&panel, LagOrder(1)).expect("enough samples");
    let kms = KernelMatrixSet::from_view(&view, &[kernel], DEFAULT_JITTER, seed).expect("grams");
    (view.targets().clone(), kms)
}
