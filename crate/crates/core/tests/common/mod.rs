//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use ksvar::kernels::{KernelMatrixSet, KernelSpec};
use ksvar::panel::{lag_view, LagOrder, TimeSeriesPanel};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::<f64>::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

pub fn normal_vector(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::<f64>::from_fn(n, |_, _| StandardNormal.sample(rng))
}

pub fn random_kernel(rng: &mut ChaCha8Rng) -> KernelSpec {
    match rng.random_range(0..4) {
        0 => KernelSpec::Linear,
        1 => KernelSpec::polynomial(2),
        2 => KernelSpec::polynomial(3),
        _ => "gaussian:sigma=median".parse().unwrap(),
    }
}

/// Random panel and its kernel set for `(N, L, T')` with the given kernels.
pub fn random_problem(
    n: usize,
    lag: usize,
    t_eff: usize,
    kernels: &[KernelSpec],
    rng: &mut ChaCha8Rng,
) -> (DMatrix<f64>, KernelMatrixSet) {
    let vals = normal_matrix(t_eff + lag, n, rng);
    let panel = TimeSeriesPanel::with_default_labels(vals, 1.0).unwrap();
    let view = lag_view(&panel, LagOrder(lag)).unwrap();
    let kms = ksvar::mkl::expand_kernels(&view, kernels, ksvar::kernels::DEFAULT_JITTER, 0)
        .unwrap()
        .set;
    (view.targets().clone(), kms)
}

/// Symmetric square root; eigenvalues under the usual rank tolerance `n eps max|l|` are zeroed.
pub fn sqrt_psd(k: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = k.clone().symmetric_eigen();
    let tol = k.nrows() as f64 * f64::EPSILON * eig.eigenvalues.amax();
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| if v > tol { v.sqrt() } else { 0.0 }));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Accelerated proximal gradient (FISTA with restart) on
/// `1/2 ||y - X z||^2 + lambda sum_g ||z_g||` for groups of equal size `g`.
/// Returns the minimal objective value found.
pub fn fista_group_lasso(x: &DMatrix<f64>, y: &DVector<f64>, group: usize, lambda: f64, iters: usize) -> f64 {
    let lip = (x.transpose() * x).symmetric_eigenvalues().max().max(1e-300);
    let step = 1.0 / lip;
    let objective = |z: &DVector<f64>| {
        let r = y - x * z;
        let pen: f64 = (0..z.len() / group).map(|g| z.rows(g * group, group).norm()).sum();
        0.5 * r.norm_squared() + lambda * pen
    };
    let prox = |v: &DVector<f64>| {
        let mut out = v.clone();
        for g in 0..v.len() / group {
            let mut blk = out.rows_mut(g * group, group);
            let nrm = blk.norm();
            if nrm <= lambda * step {
                blk.fill(0.0);
            } else {
                blk *= 1.0 - lambda * step / nrm;
            }
        }
        out
    };
    let mut z = DVector::zeros(x.ncols());
    let mut w = z.clone();
    let mut t = 1.0_f64;
    let mut best = objective(&z);
    let mut prev = best;
    for _ in 0..iters {
        let grad = x.transpose() * (x * &w - y);
        let z_new = prox(&(&w - grad * step));
        let f = objective(&z_new);
        if f > prev {
            // Restart momentum on an objective increase.
            t = 1.0;
            w = z.clone();
            continue;
        }
        let t_new = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        w = &z_new + (&z_new - &z) * ((t - 1.0) / t_new);
        let moved = (&z_new - &z).norm();
        z = z_new;
        t = t_new;
        prev = f;
        best = best.min(f);
        if moved <= 1e-15 * (1.0 + z.norm()) {
            break;
        }
    }
    best
}

/// Oracle for the group-sparse objective of a whole kernel set, column by column.
pub fn group_oracle(targets: &DMatrix<f64>, kms: &KernelMatrixSet, lambda: f64, iters: usize) -> f64 {
    let t = kms.n_eff();
    let roots: Vec<DMatrix<f64>> = kms.blocks().iter().map(|b| sqrt_psd(&b.gram)).collect();
    (0..kms.n_nodes())
        .map(|j| {
            let active: Vec<usize> = (0..kms.n_blocks()).filter(|&b| !kms.is_self_block(b, j)).collect();
            let mut x = DMatrix::zeros(t, t * active.len());
            for (k, &b) in active.iter().enumerate() {
                x.view_mut((0, k * t), (t, t)).copy_from(&roots[b]);
            }
            fista_group_lasso(&x, &targets.column(j).into_owned(), t, lambda, iters)
        })
        .sum()
}

/// All shortest paths from `s` to `t` by exhaustive simple-path enumeration.
pub fn all_shortest_paths(adj: &[Vec<bool>], s: usize, t: usize) -> Vec<Vec<usize>> {
    fn dfs(adj: &[Vec<bool>], v: usize, t: usize, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if v == t {
            out.push(path.clone());
            return;
        }
        for w in 0..adj.len() {
            if adj[v][w] && w != v && !path.contains(&w) {
                path.push(w);
                dfs(adj, w, t, path, out);
                path.pop();
            }
        }
    }
    let mut paths = Vec::new();
    dfs(adj, s, t, &mut vec![s], &mut paths);
    let best = paths.iter().map(Vec::len).min();
    paths.into_iter().filter(|p| Some(p.len()) == best).collect()
}

/// Brute-force metrics `(betweenness, closeness, local clustering, global clustering,
/// diameter, components)` from path and triangle enumeration.
pub struct BruteMetrics {
    pub in_degree: Vec<usize>,
    pub out_degree: Vec<usize>,
    pub betweenness: Vec<f64>,
    pub closeness: Vec<f64>,
    pub clustering: Vec<f64>,
    pub global_clustering: f64,
    pub diameter: usize,
    pub components: usize,
    pub largest_component: usize,
    pub density: f64,
    pub avg_neighbors: f64,
}

pub fn brute_metrics(adj: &[Vec<bool>]) -> BruteMetrics {
    let n = adj.len();
    let edge = |i: usize, j: usize| i != j && adj[i][j];
    let in_degree: Vec<usize> = (0..n).map(|v| (0..n).filter(|&u| edge(u, v)).count()).collect();
    let out_degree: Vec<usize> = (0..n).map(|v| (0..n).filter(|&u| edge(v, u)).count()).collect();

    let mut betweenness = vec![0.0; n];
    let mut dist = vec![vec![None; n]; n];
    for s in 0..n {
        dist[s][s] = Some(0);
        for t in 0..n {
            if s == t {
                continue;
            }
            let paths = all_shortest_paths(adj, s, t);
            if paths.is_empty() {
                continue;
            }
            dist[s][t] = Some(paths[0].len() - 1);
            for (v, b) in betweenness.iter_mut().enumerate() {
                if v != s && v != t {
                    let through = paths.iter().filter(|p| p.contains(&v)).count();
                    *b += through as f64 / paths.len() as f64;
                }
            }
        }
    }
    if n >= 3 {
        for b in &mut betweenness {
            *b /= ((n - 1) * (n - 2)) as f64;
        }
    } else {
        betweenness.fill(0.0);
    }
    let closeness = (0..n)
        .map(|v| {
            if n < 2 || dist[v].iter().any(Option::is_none) {
                0.0
            } else {
                (n - 1) as f64 / dist[v].iter().map(|d| d.unwrap()).sum::<usize>() as f64
            }
        })
        .collect();

    let und = |i: usize, j: usize| edge(i, j) || edge(j, i);
    let deg: Vec<usize> = (0..n).map(|v| (0..n).filter(|&u| und(u, v)).count()).collect();
    let mut clustering = vec![0.0; n];
    let mut tri_total = 0;
    let mut triples = 0;
    for v in 0..n {
        let mut tri = 0;
        for a in 0..n {
            for b in a + 1..n {
                if und(v, a) && und(v, b) && und(a, b) {
                    tri += 1;
                }
            }
        }
        let pairs = deg[v] * deg[v].saturating_sub(1) / 2;
        tri_total += tri;
        triples += pairs;
        if pairs > 0 {
            clustering[v] = tri as f64 / pairs as f64;
        }
    }
    let global_clustering = if triples == 0 { 0.0 } else { tri_total as f64 / triples as f64 };

    // Undirected distances by Floyd-Warshall.
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for i in 0..n {
        d[i][i] = 0;
        for j in 0..n {
            if und(i, j) {
                d[i][j] = 1;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    let diameter = d.iter().flatten().filter(|&&x| x < inf).copied().max().unwrap_or(0);
    let mut label = vec![usize::MAX; n];
    let mut sizes = Vec::new();
    for v in 0..n {
        if label[v] == usize::MAX {
            let members: Vec<usize> = (0..n).filter(|&u| d[v][u] < inf).collect();
            for &u in &members {
                label[u] = sizes.len();
            }
            sizes.push(members.len());
        }
    }
    let edges: usize = out_degree.iter().sum();
    BruteMetrics {
        in_degree,
        out_degree,
        betweenness,
        closeness,
        clustering,
        global_clustering,
        diameter,
        components: sizes.len(),
        largest_component: sizes.iter().copied().max().unwrap_or(0),
        density: if n < 2 { 0.0 } else { edges as f64 / (n * (n - 1)) as f64 },
        avg_neighbors: if n == 0 { 0.0 } else { deg.iter().sum::<usize>() as f64 / n as f64 },
    }
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
