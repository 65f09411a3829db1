//! Local and global topology metrics of inferred networks.
//!
//! Conventions: degrees, betweenness and closeness use the directed aggregate support;
//! clustering, components, diameter and neighbour counts use its symmetrized simple
//! graph. Self-loops are excluded everywhere and counted separately.

use std::collections::VecDeque;
use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::solver::EffectiveNetwork;

pub const METRICS_SCHEMA_VERSION: u32 = 1;
pub const CONVENTIONS: &str = "directed: degrees, betweenness (normalized by (N-1)(N-2)), closeness (out-distances, 0 if any node unreachable); \
symmetrized: clustering, components, diameter, avg_neighbors; self-loops excluded and counted separately";

/// Directed simple graph without self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Digraph {
    out: Vec<Vec<usize>>,
    inc: Vec<Vec<usize>>,
}

impl Digraph {
    /// Edges `i -> j` for `adj[(i, j)]`; the diagonal is ignored.
    pub fn from_adjacency(adj: &DMatrix<bool>) -> Self {
        let n = adj.nrows();
        let mut out = vec![Vec::new(); n];
        let mut inc = vec![Vec::new(); n];
        for i in 0..n {
            for j in 0..n {
                if i != j && adj[(i, j)] {
                    out[i].push(j);
                    inc[j].push(i);
                }
            }
        }
        Self { out, inc }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut adj = DMatrix::from_element(n, n, false);
        for &(i, j) in edges {
            adj[(i, j)] = true;
        }
        Self::from_adjacency(&adj)
    }

    pub fn from_network(net: &EffectiveNetwork) -> Self {
        Self::from_adjacency(&net.aggregate())
    }

    pub fn n_nodes(&self) -> usize {
        self.out.len()
    }

    pub fn edge_count(&self) -> usize {
        self.out.iter().map(Vec::len).sum()
    }

    pub fn successors(&self, v: usize) -> &[usize] {
        &self.out[v]
    }

    /// Sorted undirected neighbour lists.
    pub fn symmetrized(&self) -> Vec<Vec<usize>> {
        let n = self.n_nodes();
        let mut nb = vec![Vec::new(); n];
        for v in 0..n {
            let mut all: Vec<usize> = self.out[v].iter().chain(&self.inc[v]).copied().collect();
            all.sort_unstable();
            all.dedup();
            nb[v] = all;
        }
        nb
    }
}

/// `(in, out, total)` per node.
pub fn degrees(g: &Digraph) -> Vec<(usize, usize, usize)> {
    (0..g.n_nodes())
        .map(|v| {
            let (i, o) = (g.inc[v].len(), g.out[v].len());
            (i, o, i + o)
        })
        .collect()
}

fn bfs(adj: &[Vec<usize>], s: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    dist[s] = Some(0);
    let mut queue = VecDeque::from([s]);
    while let Some(v) = queue.pop_front() {
        let d = dist[v].expect("queued nodes have a distance");
        for &w in &adj[v] {
            if dist[w].is_none() {
                dist[w] = Some(d + 1);
                queue.push_back(w);
            }
        }
    }
    dist
}

/// Directed shortest-path betweenness (Brandes), normalized by `(N-1)(N-2)`.
pub fn betweenness(g: &Digraph) -> Vec<f64> {
    let n = g.n_nodes();
    let mut cb = vec![0.0; n];
    for s in 0..n {
        let mut stack = Vec::with_capacity(n);
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut sigma = vec![0.0_f64; n];
        let mut dist = vec![usize::MAX; n];
        sigma[s] = 1.0;
        dist[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            stack.push(v);
            for &w in &g.out[v] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
                if dist[w] == dist[v] + 1 {
                    sigma[w] += sigma[v];
                    preds[w].push(v);
                }
            }
        }
        let mut delta = vec![0.0; n];
        while let Some(w) = stack.pop() {
            for &v in &preds[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
            if w != s {
                cb[w] += delta[w];
            }
        }
    }
    if n < 3 {
        return vec![0.0; n];
    }
    let norm = ((n - 1) * (n - 2)) as f64;
    cb.iter().map(|c| c / norm).collect()
}

/// `(N-1) / sum_t d(v, t)` over directed out-distances; 0 when some node is unreachable.
pub fn closeness(g: &Digraph) -> Vec<f64> {
    let n = g.n_nodes();
    (0..n)
        .map(|v| {
            if n < 2 {
                return 0.0;
            }
            let dist = bfs(&g.out, v);
            let mut total = 0;
            for d in dist {
                match d {
                    Some(d) => total += d,
                    None => return 0.0,
                }
            }
            (n - 1) as f64 / total as f64
        })
        .collect()
}

fn triangles_at(nb: &[Vec<usize>], v: usize) -> usize {
    let list = &nb[v];
    let mut count = 0;
    for (a, &x) in list.iter().enumerate() {
        for &y in &list[a + 1..] {
            if nb[x].binary_search(&y).is_ok() {
                count += 1;
            }
        }
    }
    count
}

/// Local clustering per node and the global (transitivity) coefficient, on the symmetrized graph.
pub fn clustering(g: &Digraph) -> (Vec<f64>, f64) {
    let nb = g.symmetrized();
    let mut local = Vec::with_capacity(nb.len());
    let mut closed = 0usize;
    let mut triples = 0usize;
    for v in 0..nb.len() {
        let k = nb[v].len();
        let pairs = k * k.saturating_sub(1) / 2;
        let t = triangles_at(&nb, v);
        closed += t;
        triples += pairs;
        local.push(if pairs == 0 { 0.0 } else { t as f64 / pairs as f64 });
    }
    let global = if triples == 0 { 0.0 } else { closed as f64 / triples as f64 };
    (local, global)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalMetrics {
    pub edge_count: usize,
    pub density: f64,
    pub global_clustering: f64,
    pub diameter: usize,
    pub avg_neighbors: f64,
    pub self_loop_count: usize,
    pub connected_component_count: usize,
    pub largest_component_size: usize,
}

/// Component sizes of the symmetrized graph, in order of their smallest node.
pub fn components(g: &Digraph) -> Vec<usize> {
    let nb = g.symmetrized();
    let mut seen = vec![false; nb.len()];
    let mut sizes = Vec::new();
    for s in 0..nb.len() {
        if seen[s] {
            continue;
        }
        let dist = bfs(&nb, s);
        let mut size = 0;
        for (v, d) in dist.iter().enumerate() {
            if d.is_some() {
                seen[v] = true;
                size += 1;
            }
        }
        sizes.push(size);
    }
    sizes
}

/// Longest finite geodesic of the symmetrized graph; 0 without edges.
pub fn diameter(g: &Digraph) -> usize {
    let nb = g.symmetrized();
    (0..nb.len())
        .flat_map(|s| bfs(&nb, s).into_iter().flatten())
        .max()
        .unwrap_or(0)
}

pub fn global_metrics(g: &Digraph, self_loops: usize) -> GlobalMetrics {
    let n = g.n_nodes();
    let edges = g.edge_count();
    let comps = components(g);
    let nb = g.symmetrized();
    GlobalMetrics {
        edge_count: edges,
        density: if n < 2 { 0.0 } else { edges as f64 / (n * (n - 1)) as f64 },
        global_clustering: clustering(g).1,
        diameter: diameter(g),
        avg_neighbors: if n == 0 { 0.0 } else { nb.iter().map(Vec::len).sum::<usize>() as f64 / n as f64 },
        self_loop_count: self_loops,
        connected_component_count: comps.len(),
        largest_component_size: comps.iter().copied().max().unwrap_or(0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMetrics {
    pub node: String,
    pub in_degree: usize,
    pub out_degree: usize,
    pub total_degree: usize,
    pub betweenness: f64,
    pub closeness: f64,
    pub clustering: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub conventions: String,
    pub nodes: Vec<NodeMetrics>,
    pub global: GlobalMetrics,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    scope: &'a str,
    node: &'a str,
    in_degree: Option<usize>,
    out_degree: Option<usize>,
    total_degree: Option<usize>,
    betweenness: Option<f64>,
    closeness: Option<f64>,
    clustering: Option<f64>,
    edge_count: Option<usize>,
    density: Option<f64>,
    global_clustering: Option<f64>,
    diameter: Option<usize>,
    avg_neighbors: Option<f64>,
    self_loop_count: Option<usize>,
    connected_component_count: Option<usize>,
    largest_component_size: Option<usize>,
}

impl MetricsReport {
    pub fn from_network(net: &EffectiveNetwork) -> Self {
        Self::from_graph(&Digraph::from_network(net), net.labels(), net.self_loops())
    }

    pub fn from_graph(g: &Digraph, labels: &[String], self_loops: usize) -> Self {
        let deg = degrees(g);
        let bc = betweenness(g);
        let cc = closeness(g);
        let (cl, _) = clustering(g);
        let nodes = (0..g.n_nodes())
            .map(|v| NodeMetrics {
                node: labels[v].clone(),
                in_degree: deg[v].0,
                out_degree: deg[v].1,
                total_degree: deg[v].2,
                betweenness: bc[v],
                closeness: cc[v],
                clustering: cl[v],
            })
            .collect();
        Self {
            schema_version: METRICS_SCHEMA_VERSION,
            conventions: CONVENTIONS.to_string(),
            nodes,
            global: global_metrics(g, self_loops),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// One row per node followed by one `global` row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        for n in &self.nodes {
            wtr.serialize(CsvRow {
                scope: "node",
                node: &n.node,
                in_degree: Some(n.in_degree),
                out_degree: Some(n.out_degree),
                total_degree: Some(n.total_degree),
                betweenness: Some(n.betweenness),
                closeness: Some(n.closeness),
                clustering: Some(n.clustering),
                edge_count: None,
                density: None,
                global_clustering: None,
                diameter: None,
                avg_neighbors: None,
                self_loop_count: None,
                connected_component_count: None,
                largest_component_size: None,
            })?;
        }
        let g = &self.global;
        wtr.serialize(CsvRow {
            scope: "global",
            node: "",
            in_degree: None,
            out_degree: None,
            total_degree: None,
            betweenness: None,
            closeness: None,
            clustering: None,
            edge_count: Some(g.edge_count),
            density: Some(g.density),
            global_clustering: Some(g.global_clustering),
            diameter: Some(g.diameter),
            avg_neighbors: Some(g.avg_neighbors),
            self_loop_count: Some(g.self_loop_count),
            connected_component_count: Some(g.connected_component_count),
            largest_component_size: Some(g.largest_component_size),
        })?;
        wtr.flush()?;
        Ok(())
    }
}
