//! Multi-kernel fits: every dictionary entry contributes its own RKHS block per
//! `(lag, node)`, and the group penalty selects among them.
//!
//! Block order in the expanded set is `(lag, node, kernel)` with the kernel index
//! fastest. With more than one kernel, each kernel's Grams are rescaled so that all
//! kernels share the same geometric-mean trace per sample; otherwise the penalty
//! favours whichever kernel has the largest scale.

use std::io::Write;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::{gram_stack, resolve_per_node, KernelDictionary, KernelMatrixSet, KernelSpec};
use crate::panel::{lag_view, LagAlignedView, LagOrder, TimeSeriesPanel};
use crate::solver::{admm_fit, threshold_edges, CoefficientTensor, EffectiveNetwork, FitDiagnostics, SolverConfig};

/// Expanded kernel set plus the scale applied to each kernel's Grams.
#[derive(Debug, Clone)]
pub struct ExpandedKernels {
    pub kernels: Vec<KernelSpec>,
    pub scales: Vec<f64>,
    pub set: KernelMatrixSet,
}

/// Expands a dictionary over the lag-aligned view of `panel`.
pub fn expand_dictionary(
    dict: &KernelDictionary,
    panel: &TimeSeriesPanel,
    lag: LagOrder,
    rel_jitter: f64,
    seed: u64,
) -> Result<ExpandedKernels> {
    let view = lag_view(panel, lag)?;
    expand_kernels(&view, dict.kernels(), rel_jitter, seed)
}

/// Like [`expand_dictionary`] but accepts any kernel list, duplicates included.
pub fn expand_kernels(
    view: &LagAlignedView,
    kernels: &[KernelSpec],
    rel_jitter: f64,
    seed: u64,
) -> Result<ExpandedKernels> {
    if kernels.is_empty() {
        return Err(Error::ShapeMismatch("empty kernel list".into()));
    }
    let resolved = resolve_per_node(view, kernels, seed)?;
    let mut grams = gram_stack(view, &resolved);
    let p = kernels.len();
    let mut scales = vec![1.0; p];
    if p > 1 {
        let t = view.n_eff() as f64;
        let mut mean_trace = vec![0.0; p];
        for (b, g) in grams.iter().enumerate() {
            mean_trace[b % p] += g.trace() / t;
        }
        let per_kernel = (grams.len() / p) as f64;
        for m in &mut mean_trace {
            *m /= per_kernel;
        }
        if mean_trace.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(Error::DegenerateSeries);
        }
        let geo = (mean_trace.iter().map(|m| m.ln()).sum::<f64>() / p as f64).exp();
        for (s, m) in scales.iter_mut().zip(&mean_trace) {
            *s = geo / m;
        }
        for (b, g) in grams.iter_mut().enumerate() {
            *g *= scales[b % p];
        }
    }
    let set = KernelMatrixSet::assemble(grams, view.n_nodes(), view.lag(), p, rel_jitter)?;
    Ok(ExpandedKernels {
        kernels: kernels.to_vec(),
        scales,
        set,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributionRow {
    pub i: usize,
    pub j: usize,
    pub lag: usize,
    pub p: usize,
    pub kernel: String,
    pub block_norm: f64,
}

#[derive(Debug, Clone)]
pub struct MklFit {
    pub kernels: Vec<KernelSpec>,
    pub coefficients: CoefficientTensor,
    pub network: EffectiveNetwork,
    pub diagnostics: FitDiagnostics,
}

impl MklFit {
    /// Every nonzero block `alpha_ij^{l,p}` with its Euclidean norm.
    pub fn attribution(&self) -> Vec<AttributionRow> {
        let w = &self.coefficients;
        let mut rows = Vec::new();
        for lag in 0..=w.lag() {
            for i in 0..w.n_nodes() {
                for j in 0..w.n_nodes() {
                    for p in 0..w.n_kernels() {
                        let block_norm = w.block_norm(i, j, lag, p);
                        if block_norm > 0.0 {
                            rows.push(AttributionRow {
                                i,
                                j,
                                lag,
                                p,
                                kernel: self.kernels[p].to_string(),
                                block_norm,
                            });
                        }
                    }
                }
            }
        }
        rows
    }

    /// Fraction of the total block-norm mass carried by each kernel; all zero for an empty fit.
    pub fn kernel_shares(&self) -> Vec<f64> {
        let mut mass = vec![0.0; self.kernels.len()];
        for row in self.attribution() {
            mass[row.p] += row.block_norm;
        }
        let total: f64 = mass.iter().sum();
        if total > 0.0 {
            for m in &mut mass {
                *m /= total;
            }
        }
        mass
    }

    pub fn write_attribution_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        for row in self.attribution() {
            wtr.serialize(row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Group-sparse fit over an expanded kernel set; edge `i -> j` is active when some
/// `(l, p)` block reaches `tau_alpha`.
pub fn mkl_fit(targets: &DMatrix<f64>, expanded: &ExpandedKernels, cfg: &SolverConfig) -> Result<MklFit> {
    let (coefficients, _, diagnostics) = admm_fit(targets, &expanded.set, cfg)?;
    let network = threshold_edges(&coefficients, cfg.tau_alpha);
    Ok(MklFit {
        kernels: expanded.kernels.clone(),
        coefficients,
        network,
        diagnostics,
    })
}
