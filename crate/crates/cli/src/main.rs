use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ksvar::io::{read_panel_csv, write_panel_csv};
use ksvar::metrics::MetricsReport;
use ksvar::mkl::expand_kernels;
use ksvar::panel::{lag_view, standardize, LagOrder, NoiseModel};
use ksvar::pipeline::{compare_runs, run_pipeline, Aggregation, PipelineConfig};
use ksvar::solver::{cross_validate_lambda, EffectiveNetwork, Regularizer};
use ksvar::synth::{generate_truth, simulate, Coupling};
use ksvar::{SegmentationConfig, SolverConfig, SynthConfig};

/// `println!` that reports a closed stdout as an error instead of panicking.
macro_rules! outln {
    ($($arg:tt)*) => {
        writeln!(io::stdout().lock(), $($arg)*)?
    };
}

/// Kernel-based sparse structural VAR network inference.
#[derive(Parser)]
#[command(name = "ksvar", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment a panel, fit one network per segment and write reports.
    Infer(InferArgs),
    /// Generate a synthetic panel with its ground-truth network.
    Synth(SynthArgs),
    /// Graph metrics of an edge-list JSON file.
    Metrics(MetricsArgs),
    /// Per-node deltas and global side-by-side table of two `infer` runs.
    Compare(CompareArgs),
    /// Cross-validate lambda on a whole panel.
    Cv(CvArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// Sampling rate in Hz; overrides the `.meta.json` sidecar.
    #[arg(long)]
    rate: Option<f64>,
    /// Fixed lag order L.
    #[arg(long, conflicts_with = "lag_candidates")]
    lag: Option<usize>,
    /// Candidate lag orders for BIC selection, comma separated.
    #[arg(long, value_delimiter = ',')]
    lag_candidates: Option<Vec<usize>>,
    /// Kernel, e.g. `linear`, `poly:d=2,c=1`, `gaussian:sigma=median`.
    #[arg(long, conflicts_with = "dictionary")]
    kernel: Option<String>,
    /// Kernel dictionary for multi-kernel fits, separated by `;`.
    #[arg(long, value_delimiter = ';')]
    dictionary: Option<Vec<String>>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Lambda grid for cross-validation, comma separated.
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    /// Edge threshold on block norms.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Primal and dual tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long, value_enum)]
    regularizer: Option<RegularizerArg>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RegularizerArg {
    GroupL1,
    Squared,
}

#[derive(Args)]
struct InferArgs {
    /// TOML file with PipelineConfig fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Window length in seconds.
    #[arg(long)]
    window: Option<f64>,
    /// Window overlap in seconds.
    #[arg(long)]
    overlap: Option<f64>,
    #[arg(long)]
    no_standardize: bool,
    /// `union` or `majority:K`.
    #[arg(long)]
    aggregate: Option<String>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    nodes: usize,
    #[arg(long)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    lag: usize,
    #[arg(long, default_value_t = 0.15)]
    density: f64,
    #[arg(long, value_enum, default_value = "linear")]
    coupling: CouplingArg,
    #[arg(long, default_value_t = 0.5)]
    scale: f64,
    /// Innovation standard deviation.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 1.0)]
    rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving panel.csv, panel.meta.json, truth.json and synth.json.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum CouplingArg {
    Linear,
    Quadratic,
    Sigmoid,
}

#[derive(Args)]
struct MetricsArgs {
    /// Edge-list JSON written by `infer` or `synth`.
    edges: PathBuf,
    /// Write metrics.json and metrics.csv here instead of printing JSON.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    run_a: PathBuf,
    run_b: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct CvArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    no_standardize: bool,
    #[command(flatten)]
    model: ModelArgs,
}

fn apply_model(cfg: &mut PipelineConfig, m: &ModelArgs) {
    if m.rate.is_some() {
        cfg.sample_rate_hz = m.rate;
    }
    if let Some(l) = m.lag {
        cfg.lag = Some(l);
        cfg.lag_candidates = None;
    }
    if let Some(c) = &m.lag_candidates {
        cfg.lag_candidates = Some(c.clone());
        cfg.lag = None;
    }
    if let Some(k) = &m.kernel {
        cfg.kernel = Some(k.clone());
        cfg.dictionary = None;
    }
    if let Some(d) = &m.dictionary {
        cfg.dictionary = Some(d.clone());
        cfg.kernel = None;
    }
    match (m.lambda, &m.lambda_grid) {
        (Some(l), Some(g)) => {
            cfg.lambda = Some(l);
            cfg.lambda_grid = Some(g.clone());
        }
        (Some(l), None) => {
            cfg.lambda = Some(l);
            cfg.lambda_grid = None;
        }
        (None, Some(g)) => {
            cfg.lambda = None;
            cfg.lambda_grid = Some(g.clone());
        }
        (None, None) => {}
    }
    if let Some(f) = m.folds {
        cfg.folds = f;
    }
    let s = &mut cfg.solver;
    if let Some(v) = m.rho {
        s.rho = v;
    }
    if let Some(v) = m.tau {
        s.tau_alpha = v;
    }
    if let Some(v) = m.max_iter {
        s.max_iter = v;
    }
    if let Some(v) = m.tol {
        s.tol_primal = v;
        s.tol_dual = v;
    }
    if let Some(v) = m.jitter {
        s.jitter = v;
    }
    if let Some(r) = m.regularizer {
        s.regularizer = match r {
            RegularizerArg::GroupL1 => Regularizer::GroupL1,
            RegularizerArg::Squared => Regularizer::Squared,
        };
    }
    if let Some(seed) = m.seed {
        cfg.seed = seed;
    }
}

fn parse_aggregate(s: &str) -> Result<Aggregation> {
    match s.split_once(':') {
        None if s == "union" => Ok(Aggregation::Union),
        Some(("majority", k)) => Ok(Aggregation::Majority {
            min_count: k.parse().with_context(|| format!("bad majority count {k:?}"))?,
        }),
        _ => bail!("aggregate must be `union` or `majority:K`, got {s:?}"),
    }
}

fn infer(a: InferArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str::<PipelineConfig>(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => {
            let input = a.input.clone().context("--input is required without --config")?;
            let output = a.output.clone().context("--output is required without --config")?;
            let mut cfg = PipelineConfig::new(input, output, SolverConfig::default().lambda);
            if a.model.lambda_grid.is_some() {
                cfg.lambda = None;
            }
            cfg
        }
    };
    if let Some(i) = a.input {
        cfg.input = i;
    }
    if let Some(o) = a.output {
        cfg.output_dir = o;
    }
    cfg.segmentation = SegmentationConfig {
        window_len_s: a.window.unwrap_or(cfg.segmentation.window_len_s),
        overlap_s: a.overlap.unwrap_or(cfg.segmentation.overlap_s),
    };
    if a.no_standardize {
        cfg.standardize = false;
    }
    if let Some(agg) = &a.aggregate {
        cfg.aggregate = Some(parse_aggregate(agg)?);
    }
    apply_model(&mut cfg, &a.model);

    let out = run_pipeline(&cfg)?;
    let edges: usize = out.segments.iter().map(|s| s.summary.edge_count).sum();
    let unconverged = out.segments.iter().filter(|s| !s.summary.converged).count();
    outln!(
        "{} segments, {edges} edges in total, {unconverged} segments not converged; outputs in {}",
        out.segments.len(),
        cfg.output_dir.display()
    );
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        coupling: match a.coupling {
            CouplingArg::Linear => Coupling::Linear,
            CouplingArg::Quadratic => Coupling::Quadratic,
            CouplingArg::Sigmoid => Coupling::Sigmoid,
        },
        coefficient_scale: a.scale,
        noise: NoiseModel::gaussian(a.noise),
        sample_rate_hz: a.rate,
        ..SynthConfig::new(a.nodes, a.samples, a.lag, a.density, a.seed)
    };
    let truth = generate_truth(&cfg)?;
    let panel = simulate(&truth, &cfg)?;
    fs::create_dir_all(&a.output)?;
    write_panel_csv(&panel, &a.output.join("panel.csv"))?;
    let net = truth.to_network(panel.node_labels().to_vec())?;
    fs::write(a.output.join("truth.json"), net.to_json())?;
    fs::write(a.output.join("synth.json"), serde_json::to_string_pretty(&cfg)?)?;
    outln!("{} true edges; panel written to {}", truth.edge_count(), a.output.join("panel.csv").display());
    Ok(())
}

fn metrics(a: MetricsArgs) -> Result<()> {
    let text = fs::read_to_string(&a.edges).with_context(|| format!("reading {}", a.edges.display()))?;
    let net = EffectiveNetwork::from_json(&text)?;
    let report = MetricsReport::from_network(&net);
    match a.output {
        Some(dir) => {
            fs::create_dir_all(&dir)?;
            fs::write(dir.join("metrics.json"), report.to_json())?;
            report.write_csv(fs::File::create(dir.join("metrics.csv"))?)?;
        }
        None => outln!("{}", report.to_json()),
    }
    Ok(())
}

fn compare(a: CompareArgs) -> Result<()> {
    let cmp = compare_runs(&a.run_a, &a.run_b)?;
    fs::create_dir_all(&a.output)?;
    cmp.write_csv(&a.output)?;
    outln!("{:<24} {:>12} {:>12}", "metric", "run_a", "run_b");
    for row in &cmp.global {
        outln!("{:<24} {:>12.4} {:>12.4}", row.metric, row.run_a, row.run_b);
    }
    Ok(())
}

fn cv(a: CvArgs) -> Result<()> {
    let mut cfg = PipelineConfig::new(a.input.clone(), PathBuf::new(), SolverConfig::default().lambda);
    cfg.lambda = None;
    cfg.lambda_grid = Some(Vec::new());
    apply_model(&mut cfg, &a.model);
    let grid = match &cfg.lambda_grid {
        Some(g) if !g.is_empty() => g.clone(),
        _ => bail!("--lambda-grid is required"),
    };
    let lag = cfg.lag.context("cv needs a fixed --lag")?;
    let kernels = cfg.kernels()?;
    let mut panel = read_panel_csv(&a.input, cfg.sample_rate_hz)?;
    if !a.no_standardize {
        panel = standardize(&panel)?;
    }
    let view = lag_view(&panel, LagOrder(lag))?;
    let expanded = expand_kernels(&view, &kernels, cfg.solver.jitter, cfg.seed)?;
    let res = cross_validate_lambda(view.targets(), &expanded.set, &cfg.solver, &grid, cfg.folds)?;
    outln!("lambda,mean_error");
    for row in &res.rows {
        outln!("{:?},{:?}", row.lambda, row.mean_error);
    }
    outln!("# selected lambda {:?}", res.lambda);
    Ok(())
}

fn error_record(err: &anyhow::Error) -> String {
    let chain: Vec<String> = err.chain().map(ToString::to_string).collect();
    serde_json::json!({ "status": "error", "message": err.to_string(), "causes": chain }).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Infer(a) => infer(a),
        Command::Synth(a) => synth(a),
        Command::Metrics(a) => metrics(a),
        Command::Compare(a) => compare(a),
        Command::Cv(a) => cv(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<io::Error>().is_some_and(|io| io.kind() == io::ErrorKind::BrokenPipe) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_record(&e));
            ExitCode::FAILURE
        }
    }
}
