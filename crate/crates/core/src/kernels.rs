//! Kernel functions, Gram matrices and the block layout consumed by the solvers.
//!
//! Blocks are indexed by `(lag, node, kernel)` in that order of significance:
//! block `b = (lag * N + node) * P + kernel`. The stacked matrix `K̄` places
//! block `b` in columns `b*T' .. (b+1)*T'`, and `D` carries block `b` on the
//! same diagonal position. For output node `j` the blocks `(0, j, p)` are the
//! instantaneous self-effects; they are removed from the column system so the
//! corresponding coefficients are structurally zero.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::LagAlignedView;

/// Relative eigenvalue floor: `eps = DEFAULT_JITTER * trace(K) / T'`.
pub const DEFAULT_JITTER: f64 = 1e-10;

/// Tolerance on `|K - K^T|` accepted as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Most negative eigenvalue (relative to the largest) accepted before repair.
pub const PSD_TOL: f64 = 1e-8;

const MAX_BANDWIDTH_PAIRS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Bandwidth {
    Fixed(f64),
    /// Median pairwise distance of the node's series.
    Median,
}

/// Kernel as written in a configuration; the gaussian bandwidth may still be data-driven.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KernelSpec {
    Linear,
    Polynomial { degree: u32, offset: f64 },
    Gaussian { sigma: Bandwidth },
}

/// Fully specified kernel function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Kernel {
    Linear,
    Polynomial { degree: u32, offset: f64 },
    Gaussian { sigma: f64 },
}

impl KernelSpec {
    pub fn polynomial(degree: u32) -> Self {
        KernelSpec::Polynomial { degree, offset: 1.0 }
    }

    pub fn gaussian(sigma: f64) -> Self {
        KernelSpec::Gaussian {
            sigma: Bandwidth::Fixed(sigma),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Polynomial { degree, offset } => {
                if degree == 0 {
                    return Err(Error::InvalidConfig("polynomial degree must be >= 1".into()));
                }
                if !(offset.is_finite() && offset >= 0.0) {
                    return Err(Error::InvalidConfig(format!("polynomial offset must be >= 0, got {offset}")));
                }
                Ok(())
            }
            KernelSpec::Gaussian { sigma: Bandwidth::Fixed(s) } if !(s.is_finite() && s > 0.0) => {
                Err(Error::InvalidConfig(format!("gaussian bandwidth must be positive, got {s}")))
            }
            KernelSpec::Gaussian { .. } => Ok(()),
        }
    }

    /// Fixes a data-driven bandwidth from `series`.
    pub fn resolve(&self, series: &[f64], seed: u64) -> Result<Kernel> {
        self.validate()?;
        Ok(match *self {
            KernelSpec::Linear => Kernel::Linear,
            KernelSpec::Polynomial { degree, offset } => Kernel::Polynomial { degree, offset },
            KernelSpec::Gaussian { sigma: Bandwidth::Fixed(sigma) } => Kernel::Gaussian { sigma },
            KernelSpec::Gaussian { sigma: Bandwidth::Median } => Kernel::Gaussian {
                sigma: median_bandwidth(series, seed)?,
            },
        })
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Linear => write!(f, "linear"),
            KernelSpec::Polynomial { degree, offset } => write!(f, "poly:d={degree},c={offset}"),
            KernelSpec::Gaussian { sigma: Bandwidth::Fixed(s) } => write!(f, "gaussian:sigma={s}"),
            KernelSpec::Gaussian { sigma: Bandwidth::Median } => write!(f, "gaussian:sigma=median"),
        }
    }
}

impl FromStr for KernelSpec {
    type Err = Error;

    /// Accepts `linear`, `poly:d=2,c=1`, `gaussian:sigma=0.7` and `gaussian:sigma=median`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), a.trim()),
            None => (s, ""),
        };
        let mut params = Vec::new();
        for kv in args.split(',').map(str::trim).filter(|kv| !kv.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("expected key=value in kernel spec `{s}`")))?;
            params.push((k.trim(), v.trim()));
        }
        let bad = |what: &str| Error::Parse(format!("invalid {what} in kernel spec `{s}`"));
        let spec = match name {
            "linear" => {
                if !params.is_empty() {
                    return Err(bad("parameters"));
                }
                KernelSpec::Linear
            }
            "poly" | "polynomial" => {
                let mut degree = 2;
                let mut offset = 1.0;
                for (k, v) in params {
                    match k {
                        "d" | "degree" => degree = v.parse().map_err(|_| bad("degree"))?,
                        "c" | "offset" => offset = v.parse().map_err(|_| bad("offset"))?,
                        _ => return Err(bad("parameter")),
                    }
                }
                KernelSpec::Polynomial { degree, offset }
            }
            "gaussian" | "rbf" => {
                let mut sigma = Bandwidth::Median;
                for (k, v) in params {
                    match k {
                        "sigma" if v == "median" => sigma = Bandwidth::Median,
                        "sigma" => sigma = Bandwidth::Fixed(v.parse().map_err(|_| bad("sigma"))?),
                        _ => return Err(bad("parameter")),
                    }
                }
                KernelSpec::Gaussian { sigma }
            }
            _ => return Err(Error::Parse(format!("unknown kernel `{name}`"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Candidate kernels for data-driven selection.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelDictionary {
    kernels: Vec<KernelSpec>,
    weights: Option<Vec<f64>>,
}

impl KernelDictionary {
    pub fn new(kernels: Vec<KernelSpec>) -> Result<Self> {
        if kernels.is_empty() {
            return Err(Error::InvalidConfig("kernel dictionary is empty".into()));
        }
        for (a, ka) in kernels.iter().enumerate() {
            ka.validate()?;
            if kernels[..a].contains(ka) {
                return Err(Error::InvalidConfig(format!("duplicate kernel `{ka}` in dictionary")));
            }
        }
        Ok(Self { kernels, weights: None })
    }

    /// Dictionary with convex-combination weights attached (simplex constraint enforced).
    pub fn with_weights(kernels: Vec<KernelSpec>, weights: Vec<f64>) -> Result<Self> {
        let mut dict = Self::new(kernels)?;
        if weights.len() != dict.kernels.len() {
            return Err(Error::InvalidConfig("one weight per kernel required".into()));
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig("kernel weights must be nonnegative and sum to 1".into()));
        }
        dict.weights = Some(weights);
        Ok(dict)
    }

    pub fn parse_list(s: &str) -> Result<Self> {
        let kernels = s
            .split(';')
            .map(str::trim)
            .filter(|k| !k.is_empty())
            .map(KernelSpec::from_str)
            .collect::<Result<Vec<_>>>()?;
        Self::new(kernels)
    }

    pub fn kernels(&self) -> &[KernelSpec] {
        &self.kernels
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }
}

impl Serialize for KernelDictionary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let names: Vec<String> = self.kernels.iter().map(ToString::to_string).collect();
        let mut st = s.serialize_struct("KernelDictionary", 2)?;
        st.serialize_field("kernels", &names)?;
        st.serialize_field("weights", &self.weights)?;
        st.end()
    }
}

pub fn eval_kernel(kernel: &Kernel, y: f64, psi: f64) -> f64 {
    match *kernel {
        Kernel::Linear => y * psi,
        Kernel::Polynomial { degree, offset } => (y * psi + offset).powi(degree as i32),
        Kernel::Gaussian { sigma } => (-(y - psi).powi(2) / (2.0 * sigma * sigma)).exp(),
    }
}

/// Gram matrix `[K]_{t,tau} = k(x_t, x_tau)` over the samples `x`.
pub fn gram_matrix(kernel: &Kernel, x: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let mut k = DMatrix::zeros(n, n);
    for t in 0..n {
        for tau in 0..=t {
            let v = eval_kernel(kernel, x[t], x[tau]);
            k[(t, tau)] = v;
            k[(tau, t)] = v;
        }
    }
    k
}

/// Gram matrix of `node` at lag `lag`, evaluated on the lag-shifted regressor samples.
pub fn build_gram(kernel: &Kernel, view: &LagAlignedView, node: usize, lag: usize) -> Result<DMatrix<f64>> {
    if lag > view.lag() {
        return Err(Error::InvalidLag(format!("lag {lag} exceeds view lag order {}", view.lag())));
    }
    if node >= view.n_nodes() {
        return Err(Error::ShapeMismatch(format!("node {node} out of range")));
    }
    Ok(gram_matrix(kernel, &view.regressor(node, lag)))
}

/// Median of the nonzero pairwise absolute differences, over at most 1000 pairs.
pub fn median_bandwidth(series: &[f64], seed: u64) -> Result<f64> {
    let n = series.len();
    let total_pairs = n * n.saturating_sub(1) / 2;
    let mut diffs: Vec<f64> = if total_pairs <= MAX_BANDWIDTH_PAIRS {
        let mut d = Vec::with_capacity(total_pairs);
        for a in 0..n {
            for b in a + 1..n {
                d.push((series[a] - series[b]).abs());
            }
        }
        d
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..MAX_BANDWIDTH_PAIRS)
            .map(|_| {
                let a = rng.random_range(0..n);
                let mut b = rng.random_range(0..n - 1);
                if b >= a {
                    b += 1;
                }
                (series[a] - series[b]).abs()
            })
            .collect()
    };
    diffs.retain(|d| *d > 0.0 && d.is_finite());
    if diffs.is_empty() {
        return Err(Error::DegenerateSeries);
    }
    diffs.sort_by(f64::total_cmp);
    let m = diffs.len();
    Ok(if m % 2 == 1 {
        diffs[m / 2]
    } else {
        0.5 * (diffs[m / 2 - 1] + diffs[m / 2])
    })
}

fn max_asymmetry(k: &DMatrix<f64>) -> f64 {
    let n = k.nrows();
    let mut worst = 0.0_f64;
    for r in 0..n {
        for c in r + 1..n {
            worst = worst.max((k[(r, c)] - k[(c, r)]).abs());
        }
    }
    worst
}

/// Symmetric square root after flooring eigenvalues at `jitter`.
pub fn psd_sqrt(k: &DMatrix<f64>, jitter: f64) -> Result<DMatrix<f64>> {
    if !k.is_square() {
        return Err(Error::ShapeMismatch(format!("{}x{} matrix is not square", k.nrows(), k.ncols())));
    }
    let asym = max_asymmetry(k);
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    let (values, v) = sym_eigen(k)?;
    let roots = values.map(|l| l.max(jitter).max(0.0).sqrt());
    let v = &v;
    let s = v * DMatrix::from_diagonal(&roots) * v.transpose();
    Ok(symmetrize(s))
}

/// Eigenvalues (ascending) and eigenvectors of a symmetric matrix; reads the lower triangle.
pub fn sym_eigen(k: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = k.nrows();
    let m = faer::Mat::<f64>::from_fn(n, n, |r, c| k[(r, c)]);
    let evd = m
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::NonFinite(format!("eigendecomposition failed: {e:?}")))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    Ok((DVector::from_fn(n, |i, _| s[i]), DMatrix::from_fn(n, n, |r, c| u[(r, c)])))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Eigen-factor of a Gram matrix restricted to its numerical range:
/// `K ~ U diag(values) U^T` with every kept eigenvalue above the floor.
#[derive(Debug, Clone)]
pub struct GramFactor {
    pub vectors: DMatrix<f64>,
    pub values: DVector<f64>,
    /// `U diag(sqrt(values))`, so that `K ~ F F^T`.
    pub features: DMatrix<f64>,
    pub floor: f64,
}

impl GramFactor {
    pub fn new(k: &DMatrix<f64>, rel_jitter: f64) -> Result<Self> {
        let n = k.nrows();
        let (eigenvalues, eigenvectors) = sym_eigen(k)?;
        let lmax = eigenvalues.iter().fold(0.0_f64, |m, l| m.max(*l));
        let lmin = eigenvalues.iter().fold(f64::INFINITY, |m, l| m.min(*l));
        if lmin < -PSD_TOL * lmax.max(1.0) {
            return Err(Error::NotPositiveSemidefinite(lmin));
        }
        let floor = rel_jitter * k.trace().max(0.0) / n as f64;
        let keep: Vec<usize> = (0..n).filter(|&i| eigenvalues[i] > floor).collect();
        let vectors = eigenvectors.select_columns(&keep);
        let values = DVector::from_iterator(keep.len(), keep.iter().map(|&i| eigenvalues[i]));
        let mut features = vectors.clone();
        for (c, l) in values.iter().enumerate() {
            features.column_mut(c).scale_mut(l.sqrt());
        }
        Ok(Self {
            vectors,
            values,
            features,
            floor,
        })
    }

    pub fn rank(&self) -> usize {
        self.values.len()
    }

    /// `U diag(values) U^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        symmetrize(&self.features * self.features.transpose())
    }

    /// `U diag(f(values))`.
    pub fn scaled_vectors(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut m = self.vectors.clone();
        for (c, l) in self.values.iter().enumerate() {
            let s = f(*l);
            m.column_mut(c).scale_mut(s);
        }
        m
    }

    /// Orthogonal projection onto the kept eigenspace.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.vectors * (self.vectors.transpose() * x)
    }
}

#[derive(Debug, Clone)]
pub struct GramBlock {
    pub lag: usize,
    pub node: usize,
    pub kernel: usize,
    pub gram: DMatrix<f64>,
    pub factor: GramFactor,
}

/// All Gram matrices of a fit together with their block layout.
#[derive(Debug, Clone)]
pub struct KernelMatrixSet {
    n_eff: usize,
    n_nodes: usize,
    lag: usize,
    n_kernels: usize,
    blocks: Vec<GramBlock>,
    /// Sum of the range-restricted Grams over all blocks.
    total: DMatrix<f64>,
}

impl KernelMatrixSet {
    /// Lays out `grams` (ordered by `(lag, node, kernel)`) and factorizes every block.
    pub fn assemble(
        grams: Vec<DMatrix<f64>>,
        n_nodes: usize,
        lag: usize,
        n_kernels: usize,
        rel_jitter: f64,
    ) -> Result<Self> {
        let expected = (lag + 1) * n_nodes * n_kernels;
        if n_kernels == 0 || n_nodes == 0 || grams.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "expected {expected} Gram matrices for N={n_nodes}, L={lag}, P={n_kernels}, got {}",
                grams.len()
            )));
        }
        let n_eff = grams[0].nrows();
        for g in &grams {
            if g.nrows() != n_eff || g.ncols() != n_eff {
                return Err(Error::ShapeMismatch(format!(
                    "Gram of shape {}x{} in a set of {n_eff}x{n_eff}",
                    g.nrows(),
                    g.ncols()
                )));
            }
            let asym = max_asymmetry(g);
            if asym > SYMMETRY_TOL * g.amax().max(1.0) {
                return Err(Error::NotSymmetric(asym));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("Gram matrix entry".into()));
            }
        }
        let mut blocks = Vec::with_capacity(expected);
        let mut total = DMatrix::zeros(n_eff, n_eff);
        for (b, gram) in grams.into_iter().enumerate() {
            let factor = GramFactor::new(&gram, rel_jitter)?;
            total += factor.reconstruct();
            blocks.push(GramBlock {
                lag: b / (n_nodes * n_kernels),
                node: (b / n_kernels) % n_nodes,
                kernel: b % n_kernels,
                gram,
                factor,
            });
        }
        Ok(Self {
            n_eff,
            n_nodes,
            lag,
            n_kernels,
            blocks,
            total,
        })
    }

    /// Builds every Gram of `view` with one kernel per dictionary slot.
    pub fn from_view(view: &LagAlignedView, kernels: &[KernelSpec], rel_jitter: f64, seed: u64) -> Result<Self> {
        let resolved = resolve_per_node(view, kernels, seed)?;
        let grams = gram_stack(view, &resolved);
        Self::assemble(grams, view.n_nodes(), view.lag(), kernels.len(), rel_jitter)
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
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[GramBlock] {
        &self.blocks
    }

    pub fn block(&self, b: usize) -> &GramBlock {
        &self.blocks[b]
    }

    pub fn block_index(&self, lag: usize, node: usize, kernel: usize) -> usize {
        (lag * self.n_nodes + node) * self.n_kernels + kernel
    }

    pub fn gram(&self, lag: usize, node: usize, kernel: usize) -> &DMatrix<f64> {
        &self.blocks[self.block_index(lag, node, kernel)].gram
    }

    pub(crate) fn total(&self) -> &DMatrix<f64> {
        &self.total
    }

    /// Whether block `b` is an instantaneous self-effect of node `j`.
    pub fn is_self_block(&self, b: usize, j: usize) -> bool {
        let blk = &self.blocks[b];
        blk.lag == 0 && blk.node == j
    }

    /// Blocks entering the column system of node `j`.
    pub fn active_blocks(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.blocks.len()).filter(move |&b| !self.is_self_block(b, j))
    }

    /// Column indices of `K̄` removed for node `j` (the set `I_j`).
    pub fn deleted_range(&self, j: usize) -> Range<usize> {
        let start = self.block_index(0, j, 0) * self.n_eff;
        start..start + self.n_kernels * self.n_eff
    }

    /// `K̄ = [K̄^0 ... K̄^L]`, `T' x (blocks * T')`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let t = self.n_eff;
        let mut m = DMatrix::zeros(t, t * self.blocks.len());
        for (b, blk) in self.blocks.iter().enumerate() {
            m.view_mut((0, b * t), (t, t)).copy_from(&blk.gram);
        }
        m
    }

    /// `D = Bdiag(K_b)`.
    pub fn block_diag(&self) -> DMatrix<f64> {
        self.block_diag_with(|blk| blk.gram.clone())
    }

    /// `D^{1/2}` with each block floored at its eigenvalue floor.
    pub fn block_diag_sqrt(&self) -> Result<DMatrix<f64>> {
        let mut sqrt_blocks = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            sqrt_blocks.push(psd_sqrt(&blk.gram, blk.factor.floor)?);
        }
        Ok(self.block_diag_with(|blk| {
            let b = self.block_index(blk.lag, blk.node, blk.kernel);
            sqrt_blocks[b].clone()
        }))
    }

    fn block_diag_with(&self, f: impl Fn(&GramBlock) -> DMatrix<f64>) -> DMatrix<f64> {
        let t = self.n_eff;
        let dim = t * self.blocks.len();
        let mut m = DMatrix::zeros(dim, dim);
        for (b, blk) in self.blocks.iter().enumerate() {
            m.view_mut((b * t, b * t), (t, t)).copy_from(&f(blk));
        }
        m
    }

    /// `K̄_j`: `K̄` without the columns in `I_j`.
    pub fn stacked_without(&self, j: usize) -> DMatrix<f64> {
        let keep = self.kept_indices(j);
        self.stacked().select_columns(&keep)
    }

    /// `D_j`: `D` without the rows and columns in `I_j`.
    pub fn block_diag_without(&self, j: usize) -> DMatrix<f64> {
        let keep = self.kept_indices(j);
        self.block_diag().select_rows(&keep).select_columns(&keep)
    }

    pub fn kept_indices(&self, j: usize) -> Vec<usize> {
        let del = self.deleted_range(j);
        (0..self.n_eff * self.blocks.len()).filter(|c| !del.contains(c)).collect()
    }

    /// Restricts every Gram to the given target rows and refactorizes.
    pub fn select_rows(&self, rows: &[usize], rel_jitter: f64) -> Result<Self> {
        let grams = self
            .blocks
            .iter()
            .map(|blk| blk.gram.select_rows(rows).select_columns(rows))
            .collect();
        Self::assemble(grams, self.n_nodes, self.lag, self.n_kernels, rel_jitter)
    }

    /// Cross-Gram rows `K_b[rows, cols]` of every block, used for out-of-sample prediction.
    pub fn cross_grams(&self, rows: &[usize], cols: &[usize]) -> Vec<DMatrix<f64>> {
        self.blocks
            .iter()
            .map(|blk| blk.gram.select_rows(rows).select_columns(cols))
            .collect()
    }
}

/// Resolves each dictionary slot once per node (gaussian median bandwidth uses the node's series).
pub fn resolve_per_node(view: &LagAlignedView, kernels: &[KernelSpec], seed: u64) -> Result<Vec<Vec<Kernel>>> {
    (0..view.n_nodes())
        .map(|i| {
            let series = view.regressor(i, 0);
            kernels
                .iter()
                .map(|k| k.resolve(&series, seed.wrapping_add(i as u64)))
                .collect()
        })
        .collect()
}

/// Grams ordered by `(lag, node, kernel)`; `kernels[node][p]`.
pub fn gram_stack(view: &LagAlignedView, kernels: &[Vec<Kernel>]) -> Vec<DMatrix<f64>> {
    let n = view.n_nodes();
    let p = kernels.first().map_or(0, Vec::len);
    let mut grams = Vec::with_capacity((view.lag() + 1) * n * p);
    for lag in 0..=view.lag() {
        for (node, node_kernels) in kernels.iter().enumerate() {
            let x = view.regressor(node, lag);
            for k in node_kernels {
                grams.push(gram_matrix(k, &x));
            }
        }
    }
    grams
}
