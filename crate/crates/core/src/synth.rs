//! Synthetic structural VAR ground truth, simulation and recovery scoring.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{NoiseModel, TimeSeriesPanel};
use crate::solver::EffectiveNetwork;

pub const BURN_IN: usize = 200;
pub const MAX_SPECTRAL_RADIUS: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coupling {
    Linear,
    /// `f(y) = y^2 - 1`.
    Quadratic,
    /// `f(y) = tanh(y)`.
    Sigmoid,
}

impl Coupling {
    pub fn apply(self, y: f64) -> f64 {
        match self {
            Coupling::Linear => y,
            Coupling::Quadratic => y * y - 1.0,
            Coupling::Sigmoid => y.tanh(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_nodes: usize,
    pub n_samples: usize,
    pub lag: usize,
    pub edge_density: f64,
    pub coupling: Coupling,
    pub coefficient_scale: f64,
    pub noise: NoiseModel,
    pub seed: u64,
    #[serde(default = "default_rate")]
    pub sample_rate_hz: f64,
}

fn default_rate() -> f64 {
    1.0
}

impl SynthConfig {
    pub fn new(n_nodes: usize, n_samples: usize, lag: usize, edge_density: f64, seed: u64) -> Self {
        Self {
            n_nodes,
            n_samples,
            lag,
            edge_density,
            coupling: Coupling::Linear,
            coefficient_scale: 0.5,
            noise: NoiseModel::gaussian(0.1),
            seed,
            sample_rate_hz: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_nodes;
        if n < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 nodes, got {n}")));
        }
        if self.lag == 0 {
            return Err(Error::InvalidLag("synthetic models need L >= 1".into()));
        }
        if !(self.edge_density > 0.0 && self.edge_density <= 1.0) {
            return Err(Error::InvalidConfig(format!("edge density {} outside (0, 1]", self.edge_density)));
        }
        if self.edge_density * ((n * (n - 1)) as f64) < 1.0 {
            return Err(Error::InvalidConfig("edge density yields less than one expected edge".into()));
        }
        if self.n_samples <= 10 * self.lag {
            return Err(Error::InvalidConfig(format!("T={} must exceed 10 L", self.n_samples)));
        }
        if !(self.coefficient_scale.is_finite() && self.coefficient_scale > 0.0) {
            return Err(Error::InvalidConfig("coefficient scale must be positive".into()));
        }
        if !(self.noise.variance.is_finite() && self.noise.variance >= 0.0) {
            return Err(Error::InvalidConfig("noise variance must be >= 0".into()));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        Ok(())
    }
}

/// Ground-truth coefficients: `coefficients[l][(i, j)]` is the effect of node `i` on node `j` at lag `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub coupling: Coupling,
    /// Node order in which `A^0` is strictly triangular (sources first).
    pub order: Vec<usize>,
    pub coefficients: Vec<DMatrix<f64>>,
}

impl GroundTruth {
    pub fn n_nodes(&self) -> usize {
        self.order.len()
    }

    pub fn lag(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn support(&self, i: usize, j: usize, lag: usize) -> bool {
        self.coefficients[lag][(i, j)] != 0.0
    }

    pub fn aggregate(&self) -> DMatrix<bool> {
        let n = self.n_nodes();
        DMatrix::from_fn(n, n, |i, j| (0..=self.lag()).any(|l| self.support(i, j, l)))
    }

    pub fn edge_count(&self) -> usize {
        self.coefficients.iter().map(|m| m.iter().filter(|v| **v != 0.0).count()).sum()
    }

    /// Self-loops enter linearly under quadratic coupling.
    fn link(&self, i: usize, j: usize, y: f64) -> f64 {
        if i == j && self.coupling == Coupling::Quadratic {
            y
        } else {
            self.coupling.apply(y)
        }
    }

    /// Spectral radius of the companion matrix of the linearized model.
    pub fn companion_radius(&self) -> f64 {
        companion_radius(&self.coefficients)
    }

    /// The truth as a network with weights `|a_ij^l|`.
    pub fn to_network(&self, labels: Vec<String>) -> Result<EffectiveNetwork> {
        let weights = self.coefficients.iter().map(|m| m.map(f64::abs)).collect();
        EffectiveNetwork::from_weights(labels, weights, 0.0)
    }
}

fn companion_radius(a: &[DMatrix<f64>]) -> f64 {
    let n = a[0].nrows();
    let lag = a.len() - 1;
    let inst = DMatrix::identity(n, n) - a[0].transpose();
    let m = inst.try_inverse().expect("triangular instantaneous part is invertible");
    let mut comp = DMatrix::zeros(n * lag, n * lag);
    for l in 1..=lag {
        comp.view_mut((0, (l - 1) * n), (n, n)).copy_from(&(&m * a[l].transpose()));
    }
    for k in n..n * lag {
        comp[(k, k - n)] = 1.0;
    }
    comp.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn draw_coefficient(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    let mag = scale * rng.random_range(0.5..1.0);
    if rng.random_bool(0.5) {
        mag
    } else {
        -mag
    }
}

/// Draws a sparse ground truth. `A^0` is strictly triangular in a hidden random node
/// order; lagged effects are rescaled so the companion spectral radius is at most 0.9.
pub fn generate_truth(cfg: &SynthConfig) -> Result<GroundTruth> {
    cfg.validate()?;
    let n = cfg.n_nodes;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut rank = vec![0; n];
    for (r, &v) in order.iter().enumerate() {
        rank[v] = r;
    }
    let mut coefficients = loop {
        let mut a = vec![DMatrix::zeros(n, n); cfg.lag + 1];
        for (l, m) in a.iter_mut().enumerate() {
            for i in 0..n {
                for j in 0..n {
                    let allowed = if l == 0 {
                        rank[i] < rank[j]
                    } else {
                        cfg.coupling != Coupling::Quadratic || i == j || rank[i] < rank[j]
                    };
                    if allowed && rng.random_bool(cfg.edge_density) {
                        m[(i, j)] = draw_coefficient(&mut rng, cfg.coefficient_scale);
                    }
                }
            }
        }
        if a.iter().any(|m| m.iter().any(|v| *v != 0.0)) {
            break a;
        }
    };
    loop {
        let radius = companion_radius(&coefficients);
        if radius <= MAX_SPECTRAL_RADIUS {
            break;
        }
        // Scaling A^l by c^l scales every companion eigenvalue by c.
        let c = MAX_SPECTRAL_RADIUS / radius * (1.0 - 1e-12);
        for (l, m) in coefficients.iter_mut().enumerate().skip(1) {
            *m *= c.powi(l as i32);
        }
    }
    Ok(GroundTruth {
        coupling: cfg.coupling,
        order,
        coefficients,
    })
}

/// Panel of `T` samples after a burn-in of 200, together with the innovations that produced it.
pub fn simulate_with_innovations(truth: &GroundTruth, cfg: &SynthConfig) -> Result<(TimeSeriesPanel, DMatrix<f64>)> {
    cfg.validate()?;
    let n = truth.n_nodes();
    if n != cfg.n_nodes {
        return Err(Error::ShapeMismatch(format!("truth has {n} nodes, config {}", cfg.n_nodes)));
    }
    let lag = truth.lag();
    let total = BURN_IN + cfg.n_samples;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let normal = Normal::new(0.0, cfg.noise.std_dev()).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let noise = DMatrix::<f64>::from_fn(total, n, |_, _| normal.sample(&mut rng));

    let mut y = DMatrix::zeros(total, n);
    for t in 0..lag.min(total) {
        y.set_row(t, &noise.row(t));
    }
    for t in lag..total {
        let mut row = DVector::<f64>::zeros(n);
        for l in 1..=lag {
            for i in 0..n {
                let yi = y[(t - l, i)];
                for j in 0..n {
                    let a = truth.coefficients[l][(i, j)];
                    if a != 0.0 {
                        row[j] += a * truth.link(i, j, yi);
                    }
                }
            }
        }
        for &j in &truth.order {
            let mut v = row[j] + noise[(t, j)];
            for i in 0..n {
                let a = truth.coefficients[0][(i, j)];
                if a != 0.0 {
                    v += a * truth.coupling.apply(y[(t, i)]);
                }
            }
            if !v.is_finite() || v.abs() > 1e12 {
                return Err(Error::NonFinite(format!("simulated trajectory diverged at step {t}")));
            }
            y[(t, j)] = v;
        }
    }
    let kept = y.rows(BURN_IN, cfg.n_samples).into_owned();
    let innovations = noise.rows(BURN_IN, cfg.n_samples).into_owned();
    Ok((TimeSeriesPanel::with_default_labels(kept, cfg.sample_rate_hz)?, innovations))
}

pub fn simulate(truth: &GroundTruth, cfg: &SynthConfig) -> Result<TimeSeriesPanel> {
    Ok(simulate_with_innovations(truth, cfg)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecoveryScore {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
}

/// Compares aggregate supports (edge `i -> j` at any lag, lagged self-loops included).
/// Precision is 1 without predicted edges; the AUC ranks pairs by their largest block weight.
pub fn score_recovery(est: &EffectiveNetwork, truth: &GroundTruth) -> Result<RecoveryScore> {
    if est.n_nodes() != truth.n_nodes() {
        return Err(Error::ShapeMismatch(format!(
            "estimate has {} nodes, truth {}",
            est.n_nodes(),
            truth.n_nodes()
        )));
    }
    let pred = est.aggregate();
    let real = truth.aggregate();
    let (mut tp, mut fp, mut fneg) = (0, 0, 0);
    for (p, r) in pred.iter().zip(real.iter()) {
        match (*p, *r) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fneg == 0 { 1.0 } else { tp as f64 / (tp + fneg) as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(RecoveryScore {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fneg,
        precision,
        recall,
        f1,
        auc: auc(est, truth)?,
    })
}

/// Area under the ROC curve of the threshold sweep over aggregate edge weights
/// (Mann-Whitney statistic, ties counted as one half). 0.5 when a class is empty.
pub fn auc(est: &EffectiveNetwork, truth: &GroundTruth) -> Result<f64> {
    let n = truth.n_nodes();
    if est.n_nodes() != n {
        return Err(Error::ShapeMismatch("node counts differ".into()));
    }
    let real = truth.aggregate();
    let mut scored: Vec<(f64, bool)> = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            scored.push((est.aggregate_weight(i, j), real[(i, j)]));
        }
    }
    let pos = scored.iter().filter(|s| s.1).count();
    let neg = scored.len() - pos;
    if pos == 0 || neg == 0 {
        return Ok(0.5);
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut k = 0;
    while k < scored.len() {
        let mut end = k;
        while end + 1 < scored.len() && scored[end + 1].0 == scored[k].0 {
            end += 1;
        }
        let mid_rank = (k + end) as f64 / 2.0 + 1.0;
        rank_sum += mid_rank * scored[k..=end].iter().filter(|s| s.1).count() as f64;
        k = end + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("y{i}")).collect()
    }

    #[test]
    fn full_density_fills_triangle() {
        let mut cfg = SynthConfig::new(3, 100, 1, 1.0, 3);
        cfg.coefficient_scale = 0.1;
        let truth = generate_truth(&cfg).unwrap();
        let a0 = &truth.coefficients[0];
        assert_eq!(a0.iter().filter(|v| **v != 0.0).count(), 3);
        for (r, &i) in truth.order.iter().enumerate() {
            for &j in &truth.order[..=r] {
                assert_eq!(a0[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn large_scale_is_rescaled() {
        for seed in 0..10 {
            let mut cfg = SynthConfig::new(6, 100, 2, 0.4, seed);
            cfg.coefficient_scale = 10.0;
            let truth = generate_truth(&cfg).unwrap();
            assert!(truth.companion_radius() <= MAX_SPECTRAL_RADIUS + 1e-9);
            assert!((0..6).all(|i| truth.coefficients[0][(i, i)] == 0.0));
        }
    }

    #[test]
    fn same_seed_same_panel() {
        let cfg = SynthConfig::new(4, 120, 1, 0.3, 11);
        let truth = generate_truth(&cfg).unwrap();
        assert_eq!(simulate(&truth, &cfg).unwrap(), simulate(&truth, &cfg).unwrap());
    }

    #[test]
    fn perfect_and_empty_scores() {
        let cfg = SynthConfig::new(5, 100, 1, 0.3, 2);
        let truth = generate_truth(&cfg).unwrap();
        let exact = score_recovery(&truth.to_network(labels(5)).unwrap(), &truth).unwrap();
        assert_eq!((exact.precision, exact.recall, exact.f1, exact.auc), (1.0, 1.0, 1.0, 1.0));
        let empty = score_recovery(&EffectiveNetwork::empty(labels(5), 1), &truth).unwrap();
        assert_eq!((empty.precision, empty.recall, empty.auc), (1.0, 0.0, 0.5));
    }

    #[test]
    fn rejects_invalid_configs() {
        assert!(generate_truth(&SynthConfig::new(8, 5, 1, 0.15, 0)).is_err());
        assert!(generate_truth(&SynthConfig::new(3, 100, 1, 0.1, 0)).is_err());
        assert!(generate_truth(&SynthConfig::new(3, 100, 0, 0.5, 0)).is_err());
    }
}
