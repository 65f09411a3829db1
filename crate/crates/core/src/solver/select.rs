//! Regularization and lag-order selection.

use nalgebra::DMatrix;
use serde::Serialize;

use super::{fit, predict, predict_with, ridge_fit, threshold_edges, Regularizer, SolverConfig};
use crate::error::{Error, Result};
use crate::kernels::{KernelMatrixSet, KernelSpec};
use crate::panel::{lag_view, LagOrder, TimeSeriesPanel};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvRow {
    pub lambda: f64,
    pub fold_errors: Vec<f64>,
    pub mean_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvResult {
    pub lambda: f64,
    pub rows: Vec<CvRow>,
}

/// Contiguous time-block folds over `0..n`; the first `n % folds` folds are one row longer.
pub fn contiguous_folds(n: usize, folds: usize) -> Vec<Vec<usize>> {
    let base = n / folds;
    let extra = n % folds;
    let mut start = 0;
    (0..folds)
        .map(|k| {
            let len = base + usize::from(k < extra);
            let fold: Vec<usize> = (start..start + len).collect();
            start += len;
            fold
        })
        .collect()
}

/// Picks the `lambda` with the smallest mean held-out one-step prediction error.
///
/// Every fold refits on the remaining rows and predicts the held-out targets through
/// the cross-Grams between held-out and training rows. Ties go to the larger `lambda`.
pub fn cross_validate_lambda(
    targets: &DMatrix<f64>,
    kms: &KernelMatrixSet,
    cfg: &SolverConfig,
    grid: &[f64],
    folds: usize,
) -> Result<CvResult> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty lambda grid".into()));
    }
    if folds < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 folds, got {folds}")));
    }
    let n = kms.n_eff();
    if n < 2 * folds {
        return Err(Error::InsufficientSamples { samples: n, lag: kms.lag() });
    }
    for &l in grid {
        cfg.with_lambda(l).validate()?;
    }

    let mut errors = vec![Vec::with_capacity(folds); grid.len()];
    for held in contiguous_folds(n, folds) {
        let train: Vec<usize> = (0..n).filter(|r| !held.contains(r)).collect();
        let sub = kms.select_rows(&train, cfg.jitter)?;
        let cross = kms.cross_grams(&held, &train);
        let y_train = targets.select_rows(&train);
        let y_held = targets.select_rows(&held);
        for (k, &lambda) in grid.iter().enumerate() {
            let (w, _) = fit(&y_train, &sub, &cfg.with_lambda(lambda))?;
            let resid = &y_held - predict_with(&w, &cross)?;
            errors[k].push(resid.norm_squared() / resid.len() as f64);
        }
    }

    let rows: Vec<CvRow> = grid
        .iter()
        .zip(errors)
        .map(|(&lambda, fold_errors)| CvRow {
            lambda,
            mean_error: fold_errors.iter().sum::<f64>() / fold_errors.len() as f64,
            fold_errors,
        })
        .collect();
    let best = rows
        .iter()
        .reduce(|best, r| {
            if r.mean_error < best.mean_error || (r.mean_error == best.mean_error && r.lambda > best.lambda) {
                r
            } else {
                best
            }
        })
        .expect("grid is nonempty");
    Ok(CvResult {
        lambda: best.lambda,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BicRow {
    pub lag: usize,
    pub rss: f64,
    pub parameters: usize,
    pub bic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BicResult {
    pub lag: usize,
    pub rows: Vec<BicRow>,
}

/// Ridge fit per candidate lag, scored by `T'N log(RSS / T'N) + k log(T'N)` with `k` the
/// number of blocks above `tau_alpha` times `T'`.
///
/// All candidates are scored on the same target rows (those available to the largest
/// lag). Ties go to the smaller lag.
pub fn select_lag_bic(
    panel: &TimeSeriesPanel,
    kernel: &KernelSpec,
    candidates: &[usize],
    cfg: &SolverConfig,
    seed: u64,
) -> Result<BicResult> {
    let max_lag = *candidates
        .iter()
        .max()
        .ok_or_else(|| Error::InvalidConfig("no candidate lag orders".into()))?;
    if let Some(&bad) = candidates.iter().find(|&&l| l == 0 || l >= panel.n_samples()) {
        return Err(Error::InvalidLag(format!("candidate L={bad} outside 1..{}", panel.n_samples())));
    }
    let ridge_cfg = SolverConfig {
        regularizer: Regularizer::Squared,
        ..*cfg
    };
    let mut rows = Vec::with_capacity(candidates.len());
    for &lag in candidates {
        let view = lag_view(panel, LagOrder(lag))?.skip_rows(max_lag - lag);
        let kms = KernelMatrixSet::from_view(&view, std::slice::from_ref(kernel), cfg.jitter, seed)?;
        let w = ridge_fit(view.targets(), &kms, &ridge_cfg)?;
        let rss = (view.targets() - predict(&w, &kms)?).norm_squared();
        let net = threshold_edges(&w, cfg.tau_alpha);
        let active: usize = (0..=lag).map(|l| net.weights(l).iter().filter(|v| **v > 0.0).count()).sum();
        let parameters = active * view.n_eff();
        let m = (view.n_eff() * view.n_nodes()) as f64;
        let bic = m * (rss.max(f64::MIN_POSITIVE) / m).ln() + parameters as f64 * m.ln();
        rows.push(BicRow {
            lag,
            rss,
            parameters,
            bic,
        });
    }
    let best = rows
        .iter()
        .reduce(|best, r| {
            if r.bic < best.bic || (r.bic == best.bic && r.lag < best.lag) {
                r
            } else {
                best
            }
        })
        .expect("candidates are nonempty");
    Ok(BicResult { lag: best.lag, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::DEFAULT_JITTER;

    #[test]
    fn folds_cover_rows_in_order() {
        let f = contiguous_folds(10, 3);
        assert_eq!(f, vec![vec![0, 1, 2, 3], vec![4, 5, 6], vec![7, 8, 9]]);
    }

    fn small_problem() -> (DMatrix<f64>, KernelMatrixSet) {
        let vals = DMatrix::from_fn(30, 2, |t, i| ((t * (i + 2)) as f64 * 0.7).sin());
        let panel = TimeSeriesPanel::with_default_labels(vals, 1.0).unwrap();
        let view = lag_view(&panel, LagOrder(1)).unwrap();
        let kms = KernelMatrixSet::from_view(&view, &[KernelSpec::Linear], DEFAULT_JITTER, 0).unwrap();
        (view.targets().clone(), kms)
    }

    #[test]
    fn single_lambda_is_returned() {
        let (y, kms) = small_problem();
        let cv = cross_validate_lambda(&y, &kms, &SolverConfig::default(), &[0.37], 3).unwrap();
        assert_eq!(cv.lambda, 0.37);
        assert_eq!(cv.rows[0].fold_errors.len(), 3);
    }

    #[test]
    fn duplicate_lambdas_score_identically() {
        let (y, kms) = small_problem();
        let cv = cross_validate_lambda(&y, &kms, &SolverConfig::default(), &[0.5, 0.5], 2).unwrap();
        assert_eq!(cv.rows[0].mean_error, cv.rows[1].mean_error);
        assert_eq!(cv.lambda, 0.5);
    }

    #[test]
    fn rejects_bad_arguments() {
        let (y, kms) = small_problem();
        let cfg = SolverConfig::default();
        assert!(cross_validate_lambda(&y, &kms, &cfg, &[], 3).is_err());
        assert!(cross_validate_lambda(&y, &kms, &cfg, &[0.1], 1).is_err());
        assert!(cross_validate_lambda(&y, &kms, &cfg, &[-0.1], 3).is_err());
    }

    #[test]
    fn bic_single_candidate_and_bounds() {
        let vals = DMatrix::from_fn(20, 2, |t, i| ((t * (i + 3)) as f64 * 0.3).cos());
        let panel = TimeSeriesPanel::with_default_labels(vals, 1.0).unwrap();
        let cfg = SolverConfig::default();
        assert_eq!(select_lag_bic(&panel, &KernelSpec::Linear, &[2], &cfg, 0).unwrap().lag, 2);
        assert!(select_lag_bic(&panel, &KernelSpec::Linear, &[1, 20], &cfg, 0).is_err());
        assert!(select_lag_bic(&panel, &KernelSpec::Linear, &[], &cfg, 0).is_err());
    }
}
