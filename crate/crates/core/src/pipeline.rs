//! End-to-end driver: ingest, segment, fit each segment, threshold, report.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! segment_000/edges.json        thresholded network
//! segment_000/metrics.json      MetricsReport (also metrics.csv)
//! segment_000/diagnostics.ndjson
//! segment_000/attribution.csv   per-kernel block norms (dictionaries only)
//! segment_000/cv.csv, bic.csv   selection tables when used
//! aggregate/                    optional union or majority network
//! manifest.json                 config echo, versions, per-segment summary
//! error.json                    written instead of a complete manifest on failure
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_panel_csv;
use crate::kernels::{KernelDictionary, KernelSpec};
use crate::metrics::MetricsReport;
use crate::mkl::{expand_kernels, mkl_fit};
use crate::panel::{lag_view, segment, standardize, LagOrder, SegmentationConfig, TimeSeriesPanel};
use crate::solver::{
    aggregate_networks, cross_validate_lambda, fit, select_lag_bic, threshold_edges, EffectiveNetwork,
    Regularizer, SolverConfig,
};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Aggregation {
    Union,
    /// Edges present in at least `min_count` segments.
    Majority { min_count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: PathBuf,
    /// Overrides the sidecar rate when set.
    #[serde(default)]
    pub sample_rate_hz: Option<f64>,
    pub segmentation: SegmentationConfig,
    #[serde(default)]
    pub lag: Option<usize>,
    #[serde(default)]
    pub lag_candidates: Option<Vec<usize>>,
    #[serde(default)]
    pub kernel: Option<String>,
    #[serde(default)]
    pub dictionary: Option<Vec<String>>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub lambda_grid: Option<Vec<f64>>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_true")]
    pub standardize: bool,
    #[serde(default)]
    pub aggregate: Option<Aggregation>,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
}

fn default_folds() -> usize {
    5
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq)]
pub enum LagChoice {
    Fixed(usize),
    Bic(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum LambdaChoice {
    Fixed(f64),
    Cv { grid: Vec<f64>, folds: usize },
}

impl PipelineConfig {
    /// Config with the operating point used for the ECoG analysis: L = 1, second-order
    /// polynomial kernel, 0.5 s windows without overlap.
    pub fn new(input: PathBuf, output_dir: PathBuf, lambda: f64) -> Self {
        Self {
            input,
            sample_rate_hz: None,
            segmentation: SegmentationConfig {
                window_len_s: 0.5,
                overlap_s: 0.0,
            },
            lag: Some(1),
            lag_candidates: None,
            kernel: Some("poly:d=2,c=1".into()),
            dictionary: None,
            solver: SolverConfig::default(),
            lambda: Some(lambda),
            lambda_grid: None,
            folds: default_folds(),
            standardize: true,
            aggregate: None,
            seed: 0,
            output_dir,
        }
    }

    pub fn validate(&self) -> Result<()> {
        SegmentationConfig::new(self.segmentation.window_len_s, self.segmentation.overlap_s)?;
        self.lag_choice()?;
        self.lambda_choice()?;
        self.kernels()?;
        self.effective_solver(self.lambda.unwrap_or(self.solver.lambda)).validate()?;
        if let Some(Aggregation::Majority { min_count: 0 }) = self.aggregate {
            return Err(Error::InvalidConfig("majority aggregation needs min_count >= 1".into()));
        }
        Ok(())
    }

    pub fn lag_choice(&self) -> Result<LagChoice> {
        match (&self.lag, &self.lag_candidates) {
            (Some(l), None) if *l >= 1 => Ok(LagChoice::Fixed(*l)),
            (Some(l), None) => Err(Error::InvalidLag(format!("L must be >= 1, got {l}"))),
            (None, Some(c)) if !c.is_empty() && c.iter().all(|l| *l >= 1) => Ok(LagChoice::Bic(c.clone())),
            (None, Some(_)) => Err(Error::InvalidConfig("lag candidates must be nonempty and >= 1".into())),
            _ => Err(Error::InvalidConfig("give exactly one of `lag` and `lag_candidates`".into())),
        }
    }

    pub fn lambda_choice(&self) -> Result<LambdaChoice> {
        match (&self.lambda, &self.lambda_grid) {
            (Some(l), None) => Ok(LambdaChoice::Fixed(*l)),
            (None, Some(g)) if !g.is_empty() => {
                if self.folds < 2 {
                    return Err(Error::InvalidConfig("cross-validation needs at least 2 folds".into()));
                }
                for &l in g {
                    self.effective_solver(l).validate()?;
                }
                Ok(LambdaChoice::Cv {
                    grid: g.clone(),
                    folds: self.folds,
                })
            }
            (None, Some(_)) => Err(Error::InvalidConfig("lambda grid is empty".into())),
            _ => Err(Error::InvalidConfig("give exactly one of `lambda` and `lambda_grid`".into())),
        }
    }

    /// The kernel list; a single kernel is a one-entry list.
    pub fn kernels(&self) -> Result<Vec<KernelSpec>> {
        match (&self.kernel, &self.dictionary) {
            (Some(k), None) => Ok(vec![k.parse()?]),
            (None, Some(d)) => {
                let specs = d.iter().map(|s| s.parse()).collect::<Result<Vec<KernelSpec>>>()?;
                Ok(KernelDictionary::new(specs)?.kernels().to_vec())
            }
            _ => Err(Error::InvalidConfig("give exactly one of `kernel` and `dictionary`".into())),
        }
    }

    fn effective_solver(&self, lambda: f64) -> SolverConfig {
        self.solver.with_lambda(lambda)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub index: usize,
    pub start_sample: usize,
    pub n_samples: usize,
    pub lag: usize,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub edge_count: usize,
    pub directory: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    pub created_unix_s: u64,
    pub status: String,
    pub config: PipelineConfig,
    pub seed: u64,
    pub node_labels: Vec<String>,
    pub sample_rate_hz: f64,
    pub segments: Vec<SegmentSummary>,
    pub aggregate: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SegmentResult {
    pub summary: SegmentSummary,
    pub network: EffectiveNetwork,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub manifest: Manifest,
    pub segments: Vec<SegmentResult>,
    pub aggregate: Option<EffectiveNetwork>,
}

#[derive(Debug, Serialize)]
struct ErrorRecord<'a> {
    status: &'a str,
    stage: &'a str,
    message: String,
    completed_segments: Vec<usize>,
}

/// Runs the full pipeline on the CSV named in `cfg` and writes every artifact.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let panel = read_panel_csv(&cfg.input, cfg.sample_rate_hz)?;
    run_pipeline_on(cfg, &panel)
}

/// Like [`run_pipeline`] with an already loaded panel (`cfg.input` is only echoed).
pub fn run_pipeline_on(cfg: &PipelineConfig, panel: &TimeSeriesPanel) -> Result<RunOutput> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir)?;
    let _ = fs::remove_file(cfg.output_dir.join("error.json"));
    let fail = |stage: &str, err: Error, done: Vec<usize>| -> Error {
        let rec = ErrorRecord {
            status: "error",
            stage,
            message: err.to_string(),
            completed_segments: done,
        };
        if let Ok(text) = serde_json::to_string_pretty(&rec) {
            let _ = fs::write(cfg.output_dir.join("error.json"), text);
        }
        err
    };

    let segments = segment(panel, &cfg.segmentation).map_err(|e| fail("segment", e, Vec::new()))?;
    let (_, hop) = cfg.segmentation.in_samples(panel.sample_rate_hz())?;
    let results: Vec<Result<SegmentResult>> = segments
        .par_iter()
        .enumerate()
        .map(|(k, seg)| process_segment(cfg, k, k * hop, seg))
        .collect();
    let done: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_ok())
        .map(|(k, _)| k)
        .collect();
    let mut ok = Vec::with_capacity(results.len());
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(seg) => ok.push(seg),
            Err(e) => return Err(fail(&format!("segment {k}"), e, done)),
        }
    }

    let aggregate = match cfg.aggregate {
        None => None,
        Some(agg) => {
            let min_count = match agg {
                Aggregation::Union => 1,
                Aggregation::Majority { min_count } => min_count,
            };
            let nets: Vec<EffectiveNetwork> = ok.iter().map(|s| s.network.clone()).collect();
            let net = aggregate_networks(&nets, min_count).map_err(|e| fail("aggregate", e, done.clone()))?;
            let dir = cfg.output_dir.join("aggregate");
            write_network_outputs(&dir, &net, &MetricsReport::from_network(&net))?;
            Some(net)
        }
    };

    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        created_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        status: "complete".into(),
        config: cfg.clone(),
        seed: cfg.seed,
        node_labels: panel.node_labels().to_vec(),
        sample_rate_hz: panel.sample_rate_hz(),
        segments: ok.iter().map(|s| s.summary.clone()).collect(),
        aggregate: aggregate.as_ref().map(|_| "aggregate".to_string()),
    };
    fs::write(cfg.output_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(RunOutput {
        manifest,
        segments: ok,
        aggregate,
    })
}

fn write_network_outputs(dir: &Path, net: &EffectiveNetwork, metrics: &MetricsReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("edges.json"), net.to_json())?;
    fs::write(dir.join("metrics.json"), metrics.to_json())?;
    metrics.write_csv(fs::File::create(dir.join("metrics.csv"))?)?;
    Ok(())
}

fn process_segment(cfg: &PipelineConfig, index: usize, start: usize, seg: &TimeSeriesPanel) -> Result<SegmentResult> {
    let seg = if cfg.standardize { standardize(seg)? } else { seg.clone() };
    let kernels = cfg.kernels()?;
    let dir_name = format!("segment_{index:03}");
    let dir = cfg.output_dir.join(&dir_name);
    fs::create_dir_all(&dir)?;

    let lag = match cfg.lag_choice()? {
        LagChoice::Fixed(l) => l,
        LagChoice::Bic(candidates) => {
            let bic = select_lag_bic(&seg, &kernels[0], &candidates, &cfg.solver, cfg.seed)?;
            let mut wtr = csv::Writer::from_path(dir.join("bic.csv"))?;
            for row in &bic.rows {
                wtr.serialize(row)?;
            }
            wtr.flush()?;
            bic.lag
        }
    };
    let view = lag_view(&seg, LagOrder(lag))?;
    let expanded = expand_kernels(&view, &kernels, cfg.solver.jitter, cfg.seed)?;
    let targets = view.targets();

    let lambda = match cfg.lambda_choice()? {
        LambdaChoice::Fixed(l) => l,
        LambdaChoice::Cv { grid, folds } => {
            let cv = cross_validate_lambda(targets, &expanded.set, &cfg.solver, &grid, folds)?;
            let mut wtr = csv::Writer::from_path(dir.join("cv.csv"))?;
            wtr.write_record(["lambda", "mean_error"])?;
            for row in &cv.rows {
                wtr.write_record([format!("{:?}", row.lambda), format!("{:?}", row.mean_error)])?;
            }
            wtr.flush()?;
            cv.lambda
        }
    };
    let solver = cfg.effective_solver(lambda);

    let (network, diagnostics) = if kernels.len() > 1 && solver.regularizer == Regularizer::GroupL1 {
        let fit = mkl_fit(targets, &expanded, &solver)?;
        fit.write_attribution_csv(fs::File::create(dir.join("attribution.csv"))?)?;
        (fit.network, fit.diagnostics)
    } else {
        let (w, diag) = fit(targets, &expanded.set, &solver)?;
        (threshold_edges(&w, solver.tau_alpha), diag)
    };
    let network = network.with_labels(seg.node_labels().to_vec())?;
    let metrics = MetricsReport::from_network(&network);
    write_network_outputs(&dir, &network, &metrics)?;
    fs::write(dir.join("diagnostics.ndjson"), diagnostics.to_ndjson())?;

    Ok(SegmentResult {
        summary: SegmentSummary {
            index,
            start_sample: start,
            n_samples: seg.n_samples(),
            lag,
            lambda,
            iterations: diagnostics.iterations,
            converged: diagnostics.converged,
            objective: diagnostics.objective,
            edge_count: network.edges().len(),
            directory: dir_name,
        },
        network,
        metrics,
    })
}

pub const NODE_METRICS: [&str; 6] = ["in_degree", "out_degree", "total_degree", "betweenness", "closeness", "clustering"];
pub const GLOBAL_METRICS: [&str; 8] = [
    "edges",
    "density",
    "global_clustering",
    "diameter",
    "avg_neighbors",
    "self_loops",
    "connected_components",
    "largest_component",
];

/// Metrics of a run, averaged over its segments.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub labels: Vec<String>,
    /// Per node, in the order of [`NODE_METRICS`].
    pub nodes: Vec<[f64; 6]>,
    /// In the order of [`GLOBAL_METRICS`].
    pub global: [f64; 8],
}

impl RunMetrics {
    pub fn from_report(r: &MetricsReport) -> Self {
        let g = &r.global;
        Self {
            labels: r.nodes.iter().map(|n| n.node.clone()).collect(),
            nodes: r
                .nodes
                .iter()
                .map(|n| {
                    [
                        n.in_degree as f64,
                        n.out_degree as f64,
                        n.total_degree as f64,
                        n.betweenness,
                        n.closeness,
                        n.clustering,
                    ]
                })
                .collect(),
            global: [
                g.edge_count as f64,
                g.density,
                g.global_clustering,
                g.diameter as f64,
                g.avg_neighbors,
                g.self_loop_count as f64,
                g.connected_component_count as f64,
                g.largest_component_size as f64,
            ],
        }
    }

    pub fn mean(reports: &[MetricsReport]) -> Result<Self> {
        let runs: Vec<RunMetrics> = reports.iter().map(Self::from_report).collect();
        let first = runs.first().ok_or_else(|| Error::InvalidConfig("no metrics to average".into()))?;
        if runs.iter().any(|r| r.labels != first.labels) {
            return Err(Error::LabelMismatch("segments have different node labels".into()));
        }
        let k = runs.len() as f64;
        let mut out = first.clone();
        for (v, node) in out.nodes.iter_mut().enumerate() {
            for (m, value) in node.iter_mut().enumerate() {
                *value = runs.iter().map(|r| r.nodes[v][m]).sum::<f64>() / k;
            }
        }
        for (m, value) in out.global.iter_mut().enumerate() {
            *value = runs.iter().map(|r| r.global[m]).sum::<f64>() / k;
        }
        Ok(out)
    }
}

/// Reads every `metrics.json` of a run directory (its segments, or a single report at the
/// top level) and averages them.
pub fn load_run_metrics(dir: &Path) -> Result<RunMetrics> {
    let mut reports = Vec::new();
    let top = dir.join("metrics.json");
    if top.is_file() {
        reports.push(MetricsReport::from_json(&fs::read_to_string(top)?)?);
    } else {
        let mut seg_dirs: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("segment_")))
            .collect();
        seg_dirs.sort();
        for d in seg_dirs {
            reports.push(MetricsReport::from_json(&fs::read_to_string(d.join("metrics.json"))?)?);
        }
    }
    if reports.is_empty() {
        return Err(Error::InvalidConfig(format!("no metrics found under {}", dir.display())));
    }
    RunMetrics::mean(&reports)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlobalRow {
    pub metric: String,
    pub run_a: f64,
    pub run_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub labels: Vec<String>,
    /// `run_a - run_b` per node, in the order of [`NODE_METRICS`].
    pub node_deltas: Vec<[f64; 6]>,
    pub global: Vec<GlobalRow>,
}

impl Comparison {
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut wtr = csv::Writer::from_path(dir.join("node_deltas.csv"))?;
        let mut header = vec!["node"];
        header.extend(NODE_METRICS);
        wtr.write_record(&header)?;
        for (label, row) in self.labels.iter().zip(&self.node_deltas) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|v| format!("{v:?}")));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        let mut wtr = csv::Writer::from_path(dir.join("global_comparison.csv"))?;
        for row in &self.global {
            wtr.serialize(row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub fn compare_metrics(a: &RunMetrics, b: &RunMetrics) -> Result<Comparison> {
    if a.labels != b.labels {
        return Err(Error::LabelMismatch("runs have different node labels".into()));
    }
    let node_deltas = a
        .nodes
        .iter()
        .zip(&b.nodes)
        .map(|(x, y)| std::array::from_fn(|m| x[m] - y[m]))
        .collect();
    let global = GLOBAL_METRICS
        .iter()
        .enumerate()
        .map(|(m, name)| GlobalRow {
            metric: (*name).into(),
            run_a: a.global[m],
            run_b: b.global[m],
        })
        .collect();
    Ok(Comparison {
        labels: a.labels.clone(),
        node_deltas,
        global,
    })
}

/// Per-node metric deltas and a side-by-side global table of two run directories.
pub fn compare_runs(dir_a: &Path, dir_b: &Path) -> Result<Comparison> {
    compare_metrics(&load_run_metrics(dir_a)?, &load_run_metrics(dir_b)?)
}
