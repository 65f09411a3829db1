//! Closed-form fit for the squared (kernel ridge) regularizer.
//!
//! The column optimum `(K̄_j^T K̄_j + 2 lambda D_j) alpha = K̄_j^T y_j` is attained by
//! `alpha_b = P_b c` with `c = (2 lambda I + sum_b K_b)^{-1} y_j`, where `P_b` projects
//! onto the range of `K_b`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::admm::ColumnSystem;
use super::{check_targets, CoefficientTensor, Regularizer, SolverConfig};
use crate::error::{Error, Result};
use crate::kernels::KernelMatrixSet;

pub fn ridge_fit(targets: &DMatrix<f64>, kms: &KernelMatrixSet, cfg: &SolverConfig) -> Result<CoefficientTensor> {
    cfg.validate()?;
    if cfg.regularizer != Regularizer::Squared {
        return Err(Error::InvalidConfig("ridge_fit requires the squared regularizer".into()));
    }
    check_targets(targets, kms)?;
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("targets".into()));
    }
    let columns = (0..kms.n_nodes())
        .into_par_iter()
        .map(|j| {
            let sys = ColumnSystem::new(kms, j, 2.0 * cfg.lambda)?;
            let c = sys.solve_g(&targets.column(j).into_owned());
            let mut col = vec![DVector::zeros(kms.n_eff()); kms.n_blocks()];
            for &b in sys.active() {
                col[b] = kms.block(b).factor.project(&c);
            }
            Ok(col)
        })
        .collect::<Result<Vec<_>>>()?;
    let w = CoefficientTensor::from_columns(kms, columns);
    if !w.is_finite() {
        return Err(Error::NonFinite("coefficients".into()));
    }
    Ok(w)
}
