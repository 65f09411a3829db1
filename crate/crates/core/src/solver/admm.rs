//! Group-sparse fit by ADMM on the split `gamma_ij^l = K_i^{l 1/2} alpha_ij^l`.
//!
//! Each block is handled in the eigenbasis of its Gram matrix restricted to the
//! numerical range (`K_b ~ U_b diag(l_b) U_b^T`). With `F_b = U_b diag(sqrt(l_b))` and
//! `r = sum_b rank(K_b)`, the column system `(K̄_j^T K̄_j + rho D_j) alpha = q` becomes
//! `(F^T F + rho I) s = F^T q'`. It is factorized once per fit, either directly
//! (`r <= T'`) or through the matrix inversion lemma on the `T' x T'` matrix
//! `G_j = rho I + sum_{b in active(j)} K_b`. Per iteration and column this costs
//! `O(min(r, T')^2 + T' r)`, linear in the number of nodes.

use std::ops::Range;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use super::{check_targets, CoefficientTensor, FitDiagnostics, IterationRecord, Regularizer, SolverConfig};
use crate::error::{Error, Result};
use crate::kernels::KernelMatrixSet;

/// Proximal operator of `threshold * ||.||_2`: `z / ||z|| * max(||z|| - threshold, 0)`.
pub fn block_shrinkage(z: &DVector<f64>, threshold: f64) -> DVector<f64> {
    let mut out = z.clone();
    shrink_in_place(&mut out, threshold);
    out
}

fn shrink_in_place(z: &mut DVector<f64>, threshold: f64) {
    let norm = z.norm();
    if norm <= threshold || norm == 0.0 {
        z.fill(0.0);
    } else {
        z.scale_mut((norm - threshold) / norm);
    }
}

/// `Xi + rho * (D^{1/2} W - Gamma)`.
pub fn dual_update(xi: &DMatrix<f64>, d_sqrt_w: &DMatrix<f64>, gamma: &DMatrix<f64>, rho: f64) -> Result<DMatrix<f64>> {
    if xi.shape() != d_sqrt_w.shape() || xi.shape() != gamma.shape() {
        return Err(Error::ShapeMismatch("dual update operands differ in shape".into()));
    }
    Ok(xi + (d_sqrt_w - gamma) * rho)
}

/// Cached factorization of the column system of one output node.
#[derive(Debug, Clone)]
pub struct ColumnSystem {
    node: usize,
    active: Vec<usize>,
    shift: f64,
    chol: Cholesky<f64, Dyn>,
}

impl ColumnSystem {
    /// Factorizes `G_j = shift * I + sum_{b in active(j)} K_b`.
    pub fn new(kms: &KernelMatrixSet, node: usize, shift: f64) -> Result<Self> {
        let t = kms.n_eff();
        let mut g = kms.total().clone();
        for p in 0..kms.n_kernels() {
            let b = kms.block_index(0, node, p);
            g -= kms.block(b).factor.reconstruct();
        }
        g = (&g + g.transpose()) * 0.5;
        for d in 0..t {
            g[(d, d)] += shift;
        }
        let chol = Cholesky::new(g).ok_or(Error::SingularSystem { column: node })?;
        Ok(Self {
            node,
            active: kms.active_blocks(node).collect(),
            shift,
            chol,
        })
    }

    pub fn node(&self) -> usize {
        self.node
    }

    /// Block indices of the unknowns, in order.
    pub fn active(&self) -> &[usize] {
        &self.active
    }

    /// Solves `(K̄_j^T K̄_j + shift * D_j) alpha = q` on the range of the Grams.
    ///
    /// `q` holds one length-`T'` vector per active block. The returned blocks lie in
    /// the range of their Gram; components of `q` outside that range are ignored.
    pub fn solve(&self, kms: &KernelMatrixSet, q: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        if q.len() != self.active.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} right-hand blocks for {} unknown blocks",
                q.len(),
                self.active.len()
            )));
        }
        let t = kms.n_eff();
        let mut qt = Vec::with_capacity(q.len());
        let mut rhs = DVector::zeros(t);
        for (&b, qb) in self.active.iter().zip(q) {
            let f = &kms.block(b).factor;
            let reduced = f.vectors.transpose() * qb;
            rhs.gemv(1.0, &f.vectors, &reduced, 1.0);
            qt.push(reduced);
        }
        let w = self.chol.solve(&rhs);
        Ok(self
            .active
            .iter()
            .zip(qt)
            .map(|(&b, reduced)| {
                let f = &kms.block(b).factor;
                let uw = f.vectors.transpose() * &w;
                let beta = DVector::from_iterator(
                    reduced.len(),
                    reduced.iter().zip(f.values.iter()).zip(uw.iter()).map(|((q, l), u)| (q / l - u) / self.shift),
                );
                &f.vectors * beta
            })
            .collect())
    }

    pub(crate) fn solve_g(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(v)
    }
}

/// Split and dual variables, stacked like `D^{1/2} W_alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub gamma: DMatrix<f64>,
    pub xi: DMatrix<f64>,
}

/// All block features side by side, `[F_0 ... F_{B-1}]`; block `b` owns columns `offs[b]..offs[b + 1]`.
struct Stacked {
    f: DMatrix<f64>,
    offs: Vec<usize>,
}

impl Stacked {
    fn new(kms: &KernelMatrixSet) -> Self {
        let mut offs = Vec::with_capacity(kms.n_blocks() + 1);
        let mut r = 0;
        for blk in kms.blocks() {
            offs.push(r);
            r += blk.factor.rank();
        }
        offs.push(r);
        let mut f = DMatrix::zeros(kms.n_eff(), r);
        for (b, blk) in kms.blocks().iter().enumerate() {
            f.columns_mut(offs[b], offs[b + 1] - offs[b]).copy_from(&blk.factor.features);
        }
        Self { f, offs }
    }
}

/// Columns `lo..hi` of the stacked features are dropped for a column; coordinates past
/// `hi` shift down by `hi - lo`.
#[derive(Clone, Copy)]
struct Gap {
    lo: usize,
    hi: usize,
}

impl Gap {
    /// `out += alpha * F_j v`.
    fn mul(self, st: &Stacked, v: &DVector<f64>, alpha: f64, out: &mut DVector<f64>) {
        let tail = st.f.ncols() - self.hi;
        if self.lo > 0 {
            out.gemv(alpha, &st.f.columns(0, self.lo), &v.rows(0, self.lo), 1.0);
        }
        if tail > 0 {
            out.gemv(alpha, &st.f.columns(self.hi, tail), &v.rows(self.lo, tail), 1.0);
        }
    }

    /// `out = F_j^T u`.
    fn mul_tr(self, st: &Stacked, u: &DVector<f64>, out: &mut DVector<f64>) {
        let tail = st.f.ncols() - self.hi;
        if self.lo > 0 {
            out.rows_mut(0, self.lo).gemv_tr(1.0, &st.f.columns(0, self.lo), u, 0.0);
        }
        if tail > 0 {
            out.rows_mut(self.lo, tail).gemv_tr(1.0, &st.f.columns(self.hi, tail), u, 0.0);
        }
    }
}

/// Per-column ADMM state in reduced (eigenbasis) coordinates, stored flat.
struct ColumnState {
    gap: Gap,
    /// Active blocks and their coordinate ranges.
    blocks: Vec<(usize, Range<usize>)>,
    step: StepSolver,
    y: DVector<f64>,
    /// `K_b^{1/2} alpha_b` in reduced coordinates (W iterate).
    s: DVector<f64>,
    g: DVector<f64>,
    x: DVector<f64>,
    h: DVector<f64>,
    work: DVector<f64>,
}

/// Linear solver of the W update `(F^T F + rho I) s = F^T y + h`, `F = [F_b]`.
enum StepSolver {
    /// Through `G_j = rho I + sum_b K_b` (`T' x T'`), used when the total rank exceeds `T'`.
    Woodbury(ColumnSystem),
    /// Directly on the stacked reduced coordinates (`r x r`, `r = sum_b rank(K_b)`).
    Reduced { chol: Cholesky<f64, Dyn>, fty: DVector<f64> },
}

struct StepStats {
    primal_sq: f64,
    dual_sq: f64,
    objective: f64,
    finite: bool,
}

impl ColumnState {
    fn new(kms: &KernelMatrixSet, st: &Stacked, node: usize, y: DVector<f64>, rho: f64, allow_reduced: bool) -> Result<Self> {
        let first = kms.block_index(0, node, 0);
        let gap = Gap {
            lo: st.offs[first],
            hi: st.offs[first + kms.n_kernels()],
        };
        let width = gap.hi - gap.lo;
        let blocks: Vec<(usize, Range<usize>)> = kms
            .active_blocks(node)
            .map(|b| {
                let (a, e) = (st.offs[b], st.offs[b + 1]);
                if a >= gap.hi {
                    (b, a - width..e - width)
                } else {
                    (b, a..e)
                }
            })
            .collect();
        let r = st.f.ncols() - width;
        let t = kms.n_eff();
        let step = if allow_reduced && r <= t {
            let f = DMatrix::from_fn(t, r, |i, c| if c < gap.lo { st.f[(i, c)] } else { st.f[(i, c + width)] });
            let mut m = f.transpose() * &f;
            for d in 0..r {
                m[(d, d)] += rho;
            }
            let chol = Cholesky::new(m).ok_or(Error::SingularSystem { column: node })?;
            StepSolver::Reduced { chol, fty: f.transpose() * &y }
        } else {
            StepSolver::Woodbury(ColumnSystem::new(kms, node, rho)?)
        };
        Ok(Self {
            gap,
            blocks,
            step,
            work: DVector::zeros(t),
            y,
            s: DVector::zeros(r),
            g: DVector::zeros(r),
            x: DVector::zeros(r),
            h: DVector::zeros(r),
        })
    }

    /// Exact minimizer of `1/2 ||y - F s||^2 + rho/2 ||s - g + x/rho||^2`, written to `s`.
    fn solve_w(&mut self, st: &Stacked, rho: f64) {
        match &self.step {
            StepSolver::Reduced { chol, fty } => {
                self.s.copy_from(fty);
                self.s += &self.h;
                chol.solve_mut(&mut self.s);
            }
            StepSolver::Woodbury(sys) => {
                // s = (F^T u + h) / rho with u = G^{-1} (rho y - F h).
                self.work.copy_from(&self.y);
                self.work *= rho;
                self.gap.mul(st, &self.h, -1.0, &mut self.work);
                sys.chol.solve_mut(&mut self.work);
                self.gap.mul_tr(st, &self.work, &mut self.s);
                self.s += &self.h;
                self.s /= rho;
            }
        }
    }

    fn step(&mut self, st: &Stacked, rho: f64, lambda: f64) -> StepStats {
        for i in 0..self.h.len() {
            self.h[i] = rho * self.g[i] - self.x[i];
        }
        self.solve_w(st, rho);
        self.work.copy_from(&self.y);
        self.gap.mul(st, &self.s, -1.0, &mut self.work);

        // Gamma update by block shrinkage, then the dual ascent step.
        let threshold = lambda / rho;
        let (mut penalty, mut primal_sq, mut dual_sq) = (0.0, 0.0, 0.0);
        for (_, range) in &self.blocks {
            let (mut zz, mut ss) = (0.0, 0.0);
            for i in range.clone() {
                let z = self.s[i] + self.x[i] / rho;
                zz += z * z;
                ss += self.s[i] * self.s[i];
            }
            penalty += ss.sqrt();
            let norm = zz.sqrt();
            let scale = if norm <= threshold || norm == 0.0 { 0.0 } else { (norm - threshold) / norm };
            for i in range.clone() {
                let g = if scale == 0.0 { 0.0 } else { (self.s[i] + self.x[i] / rho) * scale };
                let r = self.s[i] - g;
                primal_sq += r * r;
                dual_sq += (g - self.g[i]) * (g - self.g[i]);
                self.x[i] += rho * r;
                self.g[i] = g;
            }
        }
        let objective = 0.5 * self.work.norm_squared() + lambda * penalty;
        StepStats {
            primal_sq,
            dual_sq,
            objective,
            finite: objective.is_finite() && primal_sq.is_finite(),
        }
    }

    /// Coefficient blocks in full coordinates; blocks whose split variable is zero are zero.
    fn coefficients(&self, kms: &KernelMatrixSet) -> Vec<DVector<f64>> {
        let mut col = vec![DVector::zeros(kms.n_eff()); kms.n_blocks()];
        for (b, range) in &self.blocks {
            if self.g.rows_range(range.clone()).iter().all(|v| *v == 0.0) {
                continue;
            }
            let f = &kms.block(*b).factor;
            let beta = DVector::from_iterator(
                range.len(),
                self.s.rows_range(range.clone()).iter().zip(f.values.iter()).map(|(s, l)| s / l.sqrt()),
            );
            col[*b] = &f.vectors * beta;
        }
        col
    }
}

/// Group-sparse fit. Returns the coefficients, the final split/dual state and diagnostics.
pub fn admm_fit(
    targets: &DMatrix<f64>,
    kms: &KernelMatrixSet,
    cfg: &SolverConfig,
) -> Result<(CoefficientTensor, DualState, FitDiagnostics)> {
    AdmmSolver::new(targets, kms, cfg)?.run()
}

/// ADMM iteration state with the column systems already factorized.
pub struct AdmmSolver<'a> {
    kms: &'a KernelMatrixSet,
    targets: &'a DMatrix<f64>,
    cfg: SolverConfig,
    stacked: Stacked,
    states: Vec<ColumnState>,
    trace: Vec<IterationRecord>,
    converged: bool,
}

impl<'a> AdmmSolver<'a> {
    /// Validates the inputs and factorizes every column system.
    pub fn new(targets: &'a DMatrix<f64>, kms: &'a KernelMatrixSet, cfg: &SolverConfig) -> Result<Self> {
        Self::build(targets, kms, cfg, true)
    }

    fn build(targets: &'a DMatrix<f64>, kms: &'a KernelMatrixSet, cfg: &SolverConfig, allow_reduced: bool) -> Result<Self> {
        cfg.validate()?;
        if cfg.regularizer != Regularizer::GroupL1 {
            return Err(Error::InvalidConfig("admm_fit requires the group_l1 regularizer".into()));
        }
        check_targets(targets, kms)?;
        if targets.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("targets".into()));
        }
        let stacked = Stacked::new(kms);
        let states = (0..kms.n_nodes())
            .into_par_iter()
            .map(|j| ColumnState::new(kms, &stacked, j, targets.column(j).into_owned(), cfg.rho, allow_reduced))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            kms,
            targets,
            cfg: *cfg,
            stacked,
            states,
            trace: Vec::new(),
            converged: false,
        })
    }

    /// One sweep over all columns followed by the dual update.
    pub fn step(&mut self) -> Result<IterationRecord> {
        let (kms, rho, lambda) = (self.kms, self.cfg.rho, self.cfg.lambda);
        let stacked = &self.stacked;
        let stats: Vec<StepStats> = self.states.par_iter_mut().map(|st| st.step(stacked, rho, lambda)).collect();
        let iteration = self.trace.len() + 1;
        if stats.iter().any(|s| !s.finite) {
            return Err(Error::NonFinite(format!("ADMM iterate at iteration {iteration}")));
        }
        let rec = IterationRecord {
            iteration,
            primal_residual: stats.iter().map(|s| s.primal_sq).sum::<f64>().sqrt(),
            dual_residual: rho * stats.iter().map(|s| s.dual_sq).sum::<f64>().sqrt(),
            objective: stats.iter().map(|s| s.objective).sum(),
        };
        self.trace.push(rec);
        let dim = (kms.n_nodes() * kms.n_blocks() * kms.n_eff()) as f64;
        self.converged = rec.primal_residual <= self.cfg.tol_primal * dim.sqrt()
            && rec.dual_residual <= self.cfg.tol_dual * dim.sqrt();
        Ok(rec)
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Iterates until convergence or `max_iter`, then assembles the result.
    pub fn run(mut self) -> Result<(CoefficientTensor, DualState, FitDiagnostics)> {
        while !self.converged && self.trace.len() < self.cfg.max_iter {
            self.step()?;
        }
        if !self.converged {
            log::warn!("ADMM stopped after {} iterations without meeting tolerances", self.cfg.max_iter);
        }
        self.finish()
    }

    /// Current coefficients, split/dual state and diagnostics.
    pub fn finish(self) -> Result<(CoefficientTensor, DualState, FitDiagnostics)> {
        let kms = self.kms;
        let columns: Vec<Vec<DVector<f64>>> = self.states.iter().map(|st| st.coefficients(kms)).collect();
        let w = CoefficientTensor::from_columns(kms, columns);
        if !w.is_finite() {
            return Err(Error::NonFinite("coefficients".into()));
        }
        let dual_state = dual_state(kms, &self.states);
        let objective = super::group_objective(self.targets, &w, kms, self.cfg.lambda)?;
        let diag = FitDiagnostics {
            iterations: self.trace.len(),
            converged: self.converged,
            trace: self.trace,
            objective,
        };
        Ok((w, dual_state, diag))
    }
}

fn dual_state(kms: &KernelMatrixSet, states: &[ColumnState]) -> DualState {
    let t = kms.n_eff();
    let rows = t * kms.n_blocks();
    let mut gamma = DMatrix::zeros(rows, states.len());
    let mut xi = DMatrix::zeros(rows, states.len());
    for (j, st) in states.iter().enumerate() {
        for (b, range) in &st.blocks {
            let u = &kms.block(*b).factor.vectors;
            gamma.view_mut((b * t, j), (t, 1)).copy_from(&(u * st.g.rows_range(range.clone())));
            xi.view_mut((b * t, j), (t, 1)).copy_from(&(u * st.x.rows_range(range.clone())));
        }
    }
    DualState { gamma, xi }
}
