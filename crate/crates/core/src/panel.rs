//! Multivariate time-series panels, segmentation and lag alignment.

use std::collections::HashSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `T x N` matrix of observations, one column per node.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesPanel {
    values: DMatrix<f64>,
    node_labels: Vec<String>,
    sample_rate_hz: f64,
}

impl TimeSeriesPanel {
    pub fn new(values: DMatrix<f64>, node_labels: Vec<String>, sample_rate_hz: f64) -> Result<Self> {
        let (t, n) = values.shape();
        if t < 2 {
            return Err(Error::InvalidPanel(format!("need at least 2 samples, got {t}")));
        }
        if n < 2 {
            return Err(Error::InvalidPanel(format!("need at least 2 nodes, got {n}")));
        }
        if node_labels.len() != n {
            return Err(Error::InvalidPanel(format!(
                "{} labels for {n} columns",
                node_labels.len()
            )));
        }
        let mut seen = HashSet::with_capacity(n);
        for label in &node_labels {
            if !seen.insert(label.as_str()) {
                return Err(Error::InvalidPanel(format!("duplicate node label `{label}`")));
            }
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::InvalidPanel(format!("sample rate must be positive, got {sample_rate_hz}")));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidPanel(format!(
                "non-finite value at row {}, column {}",
                pos % t,
                pos / t
            )));
        }
        Ok(Self {
            values,
            node_labels,
            sample_rate_hz,
        })
    }

    /// Builds a panel with labels `y0, y1, ...`.
    pub fn with_default_labels(values: DMatrix<f64>, sample_rate_hz: f64) -> Result<Self> {
        let labels = (0..values.ncols()).map(|i| format!("y{i}")).collect();
        Self::new(values, labels, sample_rate_hz)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn node_labels(&self) -> &[String] {
        &self.node_labels
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_nodes(&self) -> usize {
        self.values.ncols()
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.sample_rate_hz
    }

    pub fn series(&self, node: usize) -> Vec<f64> {
        self.values.column(node).iter().copied().collect()
    }

    fn with_values(&self, values: DMatrix<f64>) -> Self {
        Self {
            values,
            node_labels: self.node_labels.clone(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }
}

/// Number of past samples entering the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LagOrder(pub usize);

impl LagOrder {
    pub fn get(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationConfig {
    pub window_len_s: f64,
    pub overlap_s: f64,
}

impl SegmentationConfig {
    pub fn new(window_len_s: f64, overlap_s: f64) -> Result<Self> {
        if !(window_len_s.is_finite() && window_len_s > 0.0) {
            return Err(Error::InvalidConfig(format!("window length must be positive, got {window_len_s}")));
        }
        if !(overlap_s.is_finite() && overlap_s >= 0.0 && overlap_s < window_len_s) {
            return Err(Error::InvalidConfig(format!(
                "overlap {overlap_s} must lie in [0, {window_len_s})"
            )));
        }
        Ok(Self {
            window_len_s,
            overlap_s,
        })
    }

    /// Window length and hop size in samples at the given rate.
    pub fn in_samples(&self, sample_rate_hz: f64) -> Result<(usize, usize)> {
        let window = (self.window_len_s * sample_rate_hz).round() as usize;
        let hop = ((self.window_len_s - self.overlap_s) * sample_rate_hz).round() as usize;
        if window < 2 {
            return Err(Error::InvalidConfig(format!(
                "window of {} s spans {window} samples at {sample_rate_hz} Hz (need >= 2)",
                self.window_len_s
            )));
        }
        if hop == 0 {
            return Err(Error::InvalidConfig("window hop rounds to zero samples".into()));
        }
        Ok((window, hop))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseDistribution {
    #[default]
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub variance: f64,
    #[serde(default)]
    pub distribution: NoiseDistribution,
}

impl NoiseModel {
    pub fn gaussian(std_dev: f64) -> Self {
        Self {
            variance: std_dev * std_dev,
            distribution: NoiseDistribution::Gaussian,
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.max(0.0).sqrt()
    }
}

/// Rescales every column to zero mean and unit sample variance.
pub fn standardize(panel: &TimeSeriesPanel) -> Result<TimeSeriesPanel> {
    let (t, n) = panel.values.shape();
    let mut out = panel.values.clone();
    for j in 0..n {
        let col = panel.values.column(j);
        let mean = col.sum() / t as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (t - 1) as f64;
        let scale = col.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if var <= (f64::EPSILON * scale).powi(2) {
            return Err(Error::ConstantColumn(panel.node_labels[j].clone()));
        }
        let sd = var.sqrt();
        for v in out.column_mut(j).iter_mut() {
            *v = (*v - mean) / sd;
        }
    }
    Ok(panel.with_values(out))
}

/// Splits a panel into equally sized windows. A trailing partial window is dropped.
pub fn segment(panel: &TimeSeriesPanel, cfg: &SegmentationConfig) -> Result<Vec<TimeSeriesPanel>> {
    let (window, hop) = cfg.in_samples(panel.sample_rate_hz)?;
    let len = panel.n_samples();
    if window > len {
        return Err(Error::WindowTooLong { window, len });
    }
    let count = (len - window) / hop + 1;
    Ok((0..count)
        .map(|k| {
            let start = k * hop;
            panel.with_values(panel.values.rows(start, window).into_owned())
        })
        .collect())
}

/// Targets and lagged regressors aligned on the rows `t = L, ..., T-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LagAlignedView {
    lag: usize,
    /// `lagged[l]` holds `y_{t-l}` for every target row `t`; `lagged[0]` are the targets.
    lagged: Vec<DMatrix<f64>>,
}

impl LagAlignedView {
    pub fn lag(&self) -> usize {
        self.lag
    }

    /// Effective sample count `T' = T - L`.
    pub fn n_eff(&self) -> usize {
        self.lagged[0].nrows()
    }

    pub fn n_nodes(&self) -> usize {
        self.lagged[0].ncols()
    }

    pub fn targets(&self) -> &DMatrix<f64> {
        &self.lagged[0]
    }

    pub fn lagged(&self, lag: usize) -> &DMatrix<f64> {
        &self.lagged[lag]
    }

    /// Lag-`lag` regressor series of `node` over the target rows.
    pub fn regressor(&self, node: usize, lag: usize) -> Vec<f64> {
        self.lagged[lag].column(node).iter().copied().collect()
    }

    /// Keeps only the given target rows (in the given order).
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            lag: self.lag,
            lagged: self.lagged.iter().map(|m| m.select_rows(rows)).collect(),
        }
    }

    /// Drops the first `k` target rows.
    pub fn skip_rows(&self, k: usize) -> Self {
        let rows: Vec<usize> = (k..self.n_eff()).collect();
        self.select_rows(&rows)
    }
}

pub fn lag_view(panel: &TimeSeriesPanel, lag: LagOrder) -> Result<LagAlignedView> {
    let l = lag.get();
    if l == 0 {
        return Err(Error::InvalidLag("lag order must be at least 1".into()));
    }
    let t = panel.n_samples();
    if t <= l {
        return Err(Error::InsufficientSamples { samples: t, lag: l });
    }
    let n_eff = t - l;
    let lagged = (0..=l)
        .map(|ell| panel.values.rows(l - ell, n_eff).into_owned())
        .collect();
    Ok(LagAlignedView { lag: l, lagged })
}
