//! Estimators for the kernel-based structural VAR model.
//!
//! The fit for output node `j` is
//!
//! ```text
//! min  1/2 ||y_j - sum_b K_b alpha_bj||^2 + lambda * sum_b Omega(sqrt(alpha_bj^T K_b alpha_bj))
//! ```
//!
//! over all blocks `b = (lag, node, kernel)` except the instantaneous self-block,
//! with `Omega(z) = z` (group sparse, solved by ADMM) or `Omega(z) = z^2` (ridge,
//! closed form).

mod admm;
mod network;
mod ridge;
mod select;

pub use admm::{admm_fit, AdmmSolver, DualState, block_shrinkage, dual_update, ColumnSystem};
pub use network::{aggregate_networks, block_weights, threshold_edges, Edge, EffectiveNetwork, EDGE_SCHEMA_VERSION};
pub use ridge::ridge_fit;
pub use select::{contiguous_folds, cross_validate_lambda, select_lag_bic, BicResult, BicRow, CvResult, CvRow};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{KernelMatrixSet, DEFAULT_JITTER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    #[default]
    GroupL1,
    Squared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub lambda: f64,
    pub rho: f64,
    pub tau_alpha: f64,
    pub max_iter: usize,
    pub tol_primal: f64,
    pub tol_dual: f64,
    /// Relative eigenvalue floor used when factorizing Gram matrices.
    pub jitter: f64,
    pub regularizer: Regularizer,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            rho: 0.01,
            tau_alpha: 0.01,
            max_iter: 5000,
            tol_primal: 1e-5,
            tol_dual: 1e-5,
            jitter: DEFAULT_JITTER,
            regularizer: Regularizer::GroupL1,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")))
            }
        };
        positive("lambda", self.lambda)?;
        positive("rho", self.rho)?;
        positive("tol_primal", self.tol_primal)?;
        positive("tol_dual", self.tol_dual)?;
        if !(self.tau_alpha.is_finite() && self.tau_alpha >= 0.0) {
            return Err(Error::InvalidConfig(format!("tau_alpha must be >= 0, got {}", self.tau_alpha)));
        }
        if !(self.jitter.is_finite() && self.jitter >= 0.0) {
            return Err(Error::InvalidConfig(format!("jitter must be >= 0, got {}", self.jitter)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be positive".into()));
        }
        Ok(())
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }
}

/// Coefficient blocks `alpha_ij^{l,p}`, stored per output node `j` in kernel-set block order.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTensor {
    n_eff: usize,
    n_nodes: usize,
    lag: usize,
    n_kernels: usize,
    /// `columns[j][b]`.
    columns: Vec<Vec<DVector<f64>>>,
}

impl CoefficientTensor {
    pub fn zeros(n_eff: usize, n_nodes: usize, lag: usize, n_kernels: usize) -> Self {
        let n_blocks = (lag + 1) * n_nodes * n_kernels;
        Self {
            n_eff,
            n_nodes,
            lag,
            n_kernels,
            columns: vec![vec![DVector::zeros(n_eff); n_blocks]; n_nodes],
        }
    }

    pub fn zeros_like(kms: &KernelMatrixSet) -> Self {
        Self::zeros(kms.n_eff(), kms.n_nodes(), kms.lag(), kms.n_kernels())
    }

    pub fn n_eff(&self) -> usize {
        self.n_eff
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn lag(&self) -> usize {
        self.lag
    }

    pub fn n_kernels(&self) -> usize {
        self.n_kernels
    }

    pub fn n_blocks(&self) -> usize {
        self.columns[0].len()
    }

    pub fn block_index(&self, lag: usize, node: usize, kernel: usize) -> usize {
        (lag * self.n_nodes + node) * self.n_kernels + kernel
    }

    /// `alpha_ij^{lag,kernel}`: effect of node `i` on node `j`.
    pub fn block(&self, i: usize, j: usize, lag: usize, kernel: usize) -> &DVector<f64> {
        &self.columns[j][self.block_index(lag, i, kernel)]
    }

    pub fn column(&self, j: usize) -> &[DVector<f64>] {
        &self.columns[j]
    }

    /// Sets a block. Instantaneous self-blocks cannot be set.
    pub fn set_block(&mut self, i: usize, j: usize, lag: usize, kernel: usize, value: DVector<f64>) -> Result<()> {
        if lag == 0 && i == j {
            return Err(Error::ShapeMismatch("instantaneous self-block is structurally zero".into()));
        }
        if value.len() != self.n_eff {
            return Err(Error::ShapeMismatch(format!("block of length {} vs T' = {}", value.len(), self.n_eff)));
        }
        let b = self.block_index(lag, i, kernel);
        self.columns[j][b] = value;
        Ok(())
    }

    pub(crate) fn from_columns(kms: &KernelMatrixSet, columns: Vec<Vec<DVector<f64>>>) -> Self {
        Self {
            n_eff: kms.n_eff(),
            n_nodes: kms.n_nodes(),
            lag: kms.lag(),
            n_kernels: kms.n_kernels(),
            columns,
        }
    }

    pub fn block_norm(&self, i: usize, j: usize, lag: usize, kernel: usize) -> f64 {
        self.block(i, j, lag, kernel).norm()
    }

    /// Stacked `W_alpha`, `(blocks * T') x N`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let t = self.n_eff;
        let mut w = DMatrix::zeros(t * self.n_blocks(), self.n_nodes);
        for (j, col) in self.columns.iter().enumerate() {
            for (b, blk) in col.iter().enumerate() {
                w.view_mut((b * t, j), (t, 1)).copy_from(blk);
            }
        }
        w
    }

    pub fn is_finite(&self) -> bool {
        self.columns.iter().flatten().all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// True when every instantaneous self-block is exactly zero.
    pub fn self_blocks_zero(&self) -> bool {
        (0..self.n_nodes).all(|j| {
            (0..self.n_kernels).all(|p| self.block(j, j, 0, p).iter().all(|v| *v == 0.0))
        })
    }

    fn check_layout(&self, kms: &KernelMatrixSet) -> Result<()> {
        if self.n_eff != kms.n_eff()
            || self.n_nodes != kms.n_nodes()
            || self.lag != kms.lag()
            || self.n_kernels != kms.n_kernels()
        {
            return Err(Error::ShapeMismatch("coefficient tensor does not match kernel set".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<IterationRecord>,
    pub objective: f64,
}

impl FitDiagnostics {
    /// Newline-delimited JSON, one record per iteration.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for rec in &self.trace {
            out.push_str(&serde_json::to_string(rec).expect("plain record serializes"));
            out.push('\n');
        }
        out
    }
}

/// `Y_hat = sum_b K_b W_b`, the fitted targets.
pub fn predict(w: &CoefficientTensor, kms: &KernelMatrixSet) -> Result<DMatrix<f64>> {
    w.check_layout(kms)?;
    let t = kms.n_eff();
    let mut yhat = DMatrix::zeros(t, kms.n_nodes());
    for j in 0..kms.n_nodes() {
        let mut col = DVector::zeros(t);
        for (b, alpha) in w.column(j).iter().enumerate() {
            col.gemv(1.0, &kms.block(b).gram, alpha, 1.0);
        }
        yhat.set_column(j, &col);
    }
    Ok(yhat)
}

/// Out-of-sample prediction from cross-Grams `K_b[rows, train]` (one per block).
pub fn predict_with(w: &CoefficientTensor, cross: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    if cross.len() != w.n_blocks() || cross.iter().any(|c| c.ncols() != w.n_eff()) {
        return Err(Error::ShapeMismatch("cross-Grams do not match coefficient layout".into()));
    }
    let rows = cross[0].nrows();
    let mut yhat = DMatrix::zeros(rows, w.n_nodes());
    for j in 0..w.n_nodes() {
        let mut col = DVector::zeros(rows);
        for (b, alpha) in w.column(j).iter().enumerate() {
            col.gemv(1.0, &cross[b], alpha, 1.0);
        }
        yhat.set_column(j, &col);
    }
    Ok(yhat)
}

fn check_targets(targets: &DMatrix<f64>, kms: &KernelMatrixSet) -> Result<()> {
    if targets.shape() != (kms.n_eff(), kms.n_nodes()) {
        return Err(Error::ShapeMismatch(format!(
            "targets {}x{} vs kernel set T'={} N={}",
            targets.nrows(),
            targets.ncols(),
            kms.n_eff(),
            kms.n_nodes()
        )));
    }
    Ok(())
}

/// `1/2 ||Y - Y_hat||_F^2`.
pub fn fidelity(targets: &DMatrix<f64>, w: &CoefficientTensor, kms: &KernelMatrixSet) -> Result<f64> {
    check_targets(targets, kms)?;
    let resid = targets - predict(w, kms)?;
    Ok(0.5 * resid.norm_squared())
}

/// Group-sparse objective: fidelity plus `lambda * sum sqrt(alpha^T K alpha)`.
pub fn group_objective(targets: &DMatrix<f64>, w: &CoefficientTensor, kms: &KernelMatrixSet, lambda: f64) -> Result<f64> {
    let mut penalty = 0.0;
    for j in 0..kms.n_nodes() {
        for (b, alpha) in w.column(j).iter().enumerate() {
            penalty += alpha.dot(&(&kms.block(b).gram * alpha)).max(0.0).sqrt();
        }
    }
    Ok(fidelity(targets, w, kms)? + lambda * penalty)
}

/// Ridge objective: fidelity plus `lambda * trace(W^T D W)`.
pub fn ridge_objective(targets: &DMatrix<f64>, w: &CoefficientTensor, kms: &KernelMatrixSet, lambda: f64) -> Result<f64> {
    let mut penalty = 0.0;
    for j in 0..kms.n_nodes() {
        for (b, alpha) in w.column(j).iter().enumerate() {
            penalty += alpha.dot(&(&kms.block(b).gram * alpha));
        }
    }
    Ok(fidelity(targets, w, kms)? + lambda * penalty)
}

/// Smallest `lambda` for which the all-zero tensor solves the group-sparse problem:
/// `max_{j,b} ||K_b^{1/2} y_j||`.
pub fn lambda_max(targets: &DMatrix<f64>, kms: &KernelMatrixSet) -> Result<f64> {
    check_targets(targets, kms)?;
    let mut best = 0.0_f64;
    for j in 0..kms.n_nodes() {
        let y = targets.column(j).into_owned();
        for b in kms.active_blocks(j) {
            let f = &kms.block(b).factor;
            let proj = f.vectors.transpose() * &y;
            let norm = proj
                .iter()
                .zip(f.values.iter())
                .map(|(c, l)| c * c * l)
                .sum::<f64>()
                .sqrt();
            best = best.max(norm);
        }
    }
    Ok(best)
}

/// Dispatches on the configured regularizer.
pub fn fit(
    targets: &DMatrix<f64>,
    kms: &KernelMatrixSet,
    cfg: &SolverConfig,
) -> Result<(CoefficientTensor, FitDiagnostics)> {
    match cfg.regularizer {
        Regularizer::GroupL1 => {
            let (w, _, diag) = admm_fit(targets, kms, cfg)?;
            Ok((w, diag))
        }
        Regularizer::Squared => {
            let w = ridge_fit(targets, kms, cfg)?;
            let objective = ridge_objective(targets, &w, kms, cfg.lambda)?;
            Ok((
                w,
                FitDiagnostics {
                    iterations: 0,
                    converged: true,
                    trace: Vec::new(),
                    objective,
                },
            ))
        }
    }
}
