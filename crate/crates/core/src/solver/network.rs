//! Thresholded effective networks and their edge-list serialization.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::CoefficientTensor;
use crate::error::{Error, Result};

pub const EDGE_SCHEMA_VERSION: u32 = 1;

/// Directed, lag-resolved network `A^l` recovered from a coefficient tensor.
///
/// `weights[l][(i, j)]` is the block norm of the edge `i -> j` at lag `l` when that
/// block passes the threshold and `0` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveNetwork {
    labels: Vec<String>,
    threshold: f64,
    weights: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: String,
    pub dst: String,
    pub lag: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EdgeList {
    schema_version: u32,
    nodes: Vec<String>,
    lags: usize,
    threshold: f64,
    edges: Vec<Edge>,
}

/// Per-(i, j, l) block norms, maximized over kernels. The instantaneous diagonal is zero.
pub fn block_weights(w: &CoefficientTensor) -> Vec<DMatrix<f64>> {
    let n = w.n_nodes();
    (0..=w.lag())
        .map(|lag| {
            DMatrix::from_fn(n, n, |i, j| {
                (0..w.n_kernels())
                    .map(|p| w.block_norm(i, j, lag, p))
                    .fold(0.0, f64::max)
            })
        })
        .collect()
}

/// Keeps block `(i, j, l)` iff its norm is nonzero and at least `tau`.
pub fn threshold_edges(w: &CoefficientTensor, tau: f64) -> EffectiveNetwork {
    let labels = (0..w.n_nodes()).map(|i| format!("y{i}")).collect();
    EffectiveNetwork::from_weights(labels, block_weights(w), tau).expect("tensor layout is consistent")
}

impl EffectiveNetwork {
    /// Builds a network from raw weights, dropping entries below `tau`.
    pub fn from_weights(labels: Vec<String>, mut weights: Vec<DMatrix<f64>>, tau: f64) -> Result<Self> {
        let n = labels.len();
        if weights.is_empty() || weights.iter().any(|m| m.shape() != (n, n)) {
            return Err(Error::ShapeMismatch(format!("weights must be (L+1) matrices of {n}x{n}")));
        }
        if !(tau.is_finite() && tau >= 0.0) {
            return Err(Error::InvalidConfig(format!("threshold must be >= 0, got {tau}")));
        }
        for m in &mut weights {
            for v in m.iter_mut() {
                if !v.is_finite() || *v < 0.0 {
                    return Err(Error::NonFinite("edge weight".into()));
                }
                if !(*v > 0.0 && *v >= tau) {
                    *v = 0.0;
                }
            }
        }
        for i in 0..n {
            weights[0][(i, i)] = 0.0;
        }
        Ok(Self {
            labels,
            threshold: tau,
            weights,
        })
    }

    pub fn empty(labels: Vec<String>, lag: usize) -> Self {
        let n = labels.len();
        Self {
            labels,
            threshold: 0.0,
            weights: vec![DMatrix::zeros(n, n); lag + 1],
        }
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.labels.len() {
            return Err(Error::LabelMismatch(format!("{} labels for {} nodes", labels.len(), self.labels.len())));
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn lag(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn weights(&self, lag: usize) -> &DMatrix<f64> {
        &self.weights[lag]
    }

    pub fn weight(&self, i: usize, j: usize, lag: usize) -> f64 {
        self.weights[lag][(i, j)]
    }

    pub fn support(&self, i: usize, j: usize, lag: usize) -> bool {
        self.weights[lag][(i, j)] > 0.0
    }

    /// `A^l` as a 0/1 matrix.
    pub fn support_matrix(&self, lag: usize) -> DMatrix<u8> {
        self.weights[lag].map(|v| u8::from(v > 0.0))
    }

    /// Edge `i -> j` present at some lag (diagonal entries are lagged self-loops).
    pub fn aggregate(&self) -> DMatrix<bool> {
        let n = self.n_nodes();
        DMatrix::from_fn(n, n, |i, j| (0..=self.lag()).any(|l| self.support(i, j, l)))
    }

    /// Largest weight of `i -> j` over lags.
    pub fn aggregate_weight(&self, i: usize, j: usize) -> f64 {
        self.weights.iter().map(|m| m[(i, j)]).fold(0.0, f64::max)
    }

    pub fn self_loops(&self) -> usize {
        (0..self.n_nodes()).filter(|&i| (1..=self.lag()).any(|l| self.support(i, i, l))).count()
    }

    /// Supported blocks ordered by lag, then source, then target.
    pub fn edges(&self) -> Vec<Edge> {
        let n = self.n_nodes();
        let mut out = Vec::new();
        for (lag, m) in self.weights.iter().enumerate() {
            for i in 0..n {
                for j in 0..n {
                    if m[(i, j)] > 0.0 {
                        out.push(Edge {
                            src: self.labels[i].clone(),
                            dst: self.labels[j].clone(),
                            lag,
                            weight: m[(i, j)],
                        });
                    }
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        let list = EdgeList {
            schema_version: EDGE_SCHEMA_VERSION,
            nodes: self.labels.clone(),
            lags: self.lag(),
            threshold: self.threshold,
            edges: self.edges(),
        };
        serde_json::to_string_pretty(&list).expect("edge list serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let list: EdgeList = serde_json::from_str(s)?;
        if list.schema_version != EDGE_SCHEMA_VERSION {
            return Err(Error::Parse(format!("unsupported edge schema version {}", list.schema_version)));
        }
        let n = list.nodes.len();
        let index = |label: &str| {
            list.nodes
                .iter()
                .position(|l| l == label)
                .ok_or_else(|| Error::LabelMismatch(format!("edge references unknown node {label}")))
        };
        let mut weights = vec![DMatrix::zeros(n, n); list.lags + 1];
        for e in &list.edges {
            if e.lag > list.lags {
                return Err(Error::Parse(format!("edge lag {} exceeds {}", e.lag, list.lags)));
            }
            weights[e.lag][(index(&e.src)?, index(&e.dst)?)] = e.weight;
        }
        Self::from_weights(list.nodes, weights, list.threshold)
    }
}

/// Keeps edges `(i, j, l)` present in at least `min_count` of the networks, with mean weight
/// over the networks that contain them. `min_count = 1` is the union.
pub fn aggregate_networks(nets: &[EffectiveNetwork], min_count: usize) -> Result<EffectiveNetwork> {
    let first = nets.first().ok_or_else(|| Error::InvalidConfig("no networks to aggregate".into()))?;
    if min_count == 0 || min_count > nets.len() {
        return Err(Error::InvalidConfig(format!("min_count {min_count} out of 1..={}", nets.len())));
    }
    let n = first.n_nodes();
    for net in nets {
        if net.labels != first.labels || net.lag() != first.lag() {
            return Err(Error::LabelMismatch("networks differ in nodes or lag order".into()));
        }
    }
    let weights = (0..=first.lag())
        .map(|lag| {
            DMatrix::from_fn(n, n, |i, j| {
                let present: Vec<f64> = nets.iter().map(|m| m.weight(i, j, lag)).filter(|w| *w > 0.0).collect();
                if present.len() >= min_count {
                    present.iter().sum::<f64>() / present.len() as f64
                } else {
                    0.0
                }
            })
        })
        .collect();
    EffectiveNetwork::from_weights(first.labels.clone(), weights, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn tensor_with_norms(norms: &[(usize, usize, usize, f64)]) -> CoefficientTensor {
        let mut w = CoefficientTensor::zeros(2, 3, 1, 1);
        for &(i, j, lag, n) in norms {
            w.set_block(i, j, lag, 0, DVector::from_vec(vec![n, 0.0])).unwrap();
        }
        w
    }

    #[test]
    fn below_threshold_is_empty() {
        let w = tensor_with_norms(&[(0, 1, 0, 0.001), (2, 1, 1, 0.005)]);
        assert!(threshold_edges(&w, 0.01).edges().is_empty());
    }

    #[test]
    fn zero_threshold_keeps_nonzero_pattern() {
        let w = tensor_with_norms(&[(0, 1, 0, 1e-12), (2, 2, 1, 3.0)]);
        let net = threshold_edges(&w, 0.0);
        assert_eq!(net.edges().len(), 2);
        assert!(net.support(0, 1, 0) && net.support(2, 2, 1) && !net.support(1, 0, 0));
        assert_eq!(net.self_loops(), 1);
    }

    #[test]
    fn operating_threshold_separates_close_norms() {
        let w = tensor_with_norms(&[(0, 1, 0, 0.009), (1, 2, 1, 0.011)]);
        let net = threshold_edges(&w, 0.01);
        let edges = net.edges();
        assert_eq!(edges.len(), 1);
        assert_eq!((edges[0].src.as_str(), edges[0].dst.as_str(), edges[0].lag), ("y1", "y2", 1));
    }

    #[test]
    fn weight_is_max_over_kernels() {
        let mut w = CoefficientTensor::zeros(2, 2, 1, 2);
        w.set_block(0, 1, 1, 0, DVector::from_vec(vec![0.3, 0.4])).unwrap();
        w.set_block(0, 1, 1, 1, DVector::from_vec(vec![0.0, 2.0])).unwrap();
        assert_eq!(threshold_edges(&w, 0.0).weight(0, 1, 1), 2.0);
    }

    #[test]
    fn json_round_trip() {
        let w = tensor_with_norms(&[(0, 1, 0, 0.25), (2, 0, 1, 1.0 / 3.0), (1, 1, 1, 0.5)]);
        let net = threshold_edges(&w, 0.01);
        let back = EffectiveNetwork::from_json(&net.to_json()).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn union_and_majority() {
        let a = threshold_edges(&tensor_with_norms(&[(0, 1, 0, 1.0), (1, 2, 1, 1.0)]), 0.0);
        let b = threshold_edges(&tensor_with_norms(&[(0, 1, 0, 3.0)]), 0.0);
        let c = threshold_edges(&tensor_with_norms(&[(2, 0, 1, 1.0)]), 0.0);
        let nets = [a, b, c];
        assert_eq!(aggregate_networks(&nets, 1).unwrap().edges().len(), 3);
        let maj = aggregate_networks(&nets, 2).unwrap();
        assert_eq!(maj.edges().len(), 1);
        assert_eq!(maj.weight(0, 1, 0), 2.0);
        assert!(aggregate_networks(&nets, 4).is_err());
    }
}
