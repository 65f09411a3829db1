use std::fs;
use std::path::Path;

use ksvar::io::write_panel_csv;
use ksvar::pipeline::{compare_runs, run_pipeline, Aggregation, PipelineConfig};
use ksvar::solver::EffectiveNetwork;
use ksvar::synth::{generate_truth, simulate, SynthConfig};
use ksvar::SegmentationConfig;

fn write_input(dir: &Path) -> std::path::PathBuf {
    let mut sc = SynthConfig::new(5, 120, 1, 0.3, 31);
    sc.sample_rate_hz = 20.0;
    let panel = simulate(&generate_truth(&sc).unwrap(), &sc).unwrap();
    let path = dir.join("panel.csv");
    write_panel_csv(&panel, &path).unwrap();
    path
}

fn config(input: &Path, out: &Path, lambda: f64) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(input.to_path_buf(), out.to_path_buf(), lambda);
    cfg.segmentation = SegmentationConfig::new(2.0, 0.0).unwrap();
    cfg.solver.rho = 1.0;
    cfg
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_input(dir.path());
    let a = run_pipeline(&config(&input, &dir.path().join("a"), 0.3)).unwrap();
    run_pipeline(&config(&input, &dir.path().join("b"), 0.3)).unwrap();
    assert_eq!(a.segments.len(), 3);
    assert_eq!(a.manifest.segments.len(), 3);
    for s in &a.manifest.segments {
        for file in ["edges.json", "metrics.json", "metrics.csv"] {
            let pa = dir.path().join("a").join(&s.directory).join(file);
            let pb = dir.path().join("b").join(&s.directory).join(file);
            assert_eq!(fs::read(&pa).unwrap(), fs::read(&pb).unwrap(), "{}", pa.display());
        }
    }
    assert!(dir.path().join("a/manifest.json").exists());
}

#[test]
fn edge_json_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_input(dir.path());
    let run = run_pipeline(&config(&input, &dir.path().join("r"), 0.2)).unwrap();
    for seg in &run.segments {
        let text = fs::read_to_string(dir.path().join("r").join(&seg.summary.directory).join("edges.json")).unwrap();
        let back = EffectiveNetwork::from_json(&text).unwrap();
        assert_eq!(back.edges(), seg.network.edges());
        assert_eq!(back.labels(), seg.network.labels());
        assert_eq!(back.to_json(), text);
    }
}

#[test]
fn aggregation_is_written_when_requested() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_input(dir.path());
    let mut cfg = config(&input, &dir.path().join("u"), 0.2);
    cfg.aggregate = Some(Aggregation::Union);
    let run = run_pipeline(&cfg).unwrap();
    let agg = run.aggregate.unwrap();
    for seg in &run.segments {
        for e in seg.network.edges() {
            assert!(agg.edges().iter().any(|a| a.src == e.src && a.dst == e.dst && a.lag == e.lag));
        }
    }
    assert!(dir.path().join("u/aggregate/edges.json").exists());
}

#[test]
fn comparison_of_identical_runs_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_input(dir.path());
    run_pipeline(&config(&input, &dir.path().join("a"), 0.2)).unwrap();
    run_pipeline(&config(&input, &dir.path().join("b"), 0.2)).unwrap();
    let cmp = compare_runs(&dir.path().join("a"), &dir.path().join("b")).unwrap();
    assert_eq!(cmp.node_deltas.len(), 5);
    assert!(cmp.node_deltas.iter().flatten().all(|d| *d == 0.0));
    assert!(cmp.global.iter().all(|g| g.run_a == g.run_b));
}

#[test]
fn comparison_against_an_empty_run() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_input(dir.path());
    let full = run_pipeline(&config(&input, &dir.path().join("a"), 0.05)).unwrap();
    let empty = run_pipeline(&config(&input, &dir.path().join("b"), 1e6)).unwrap();
    assert!(empty.segments.iter().all(|s| s.network.edges().is_empty()));
    let cmp = compare_runs(&dir.path().join("a"), &dir.path().join("b")).unwrap();
    let edges = cmp.global.iter().find(|g| g.metric == "edges").unwrap();
    let mean = full.segments.iter().map(|s| s.metrics.global.edge_count as f64).sum::<f64>() / 3.0;
    assert!(mean > 0.0);
    assert!((edges.run_a - mean).abs() < 1e-12);
    assert_eq!(edges.run_b, 0.0);
}

#[test]
fn bad_configs_fail_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_input(dir.path());
    let mut cfg = config(&input, &dir.path().join("x"), 0.2);
    cfg.lambda_grid = Some(vec![0.1, 0.2]);
    assert!(run_pipeline(&cfg).is_err());
    let cfg = config(&dir.path().join("missing.csv"), &dir.path().join("y"), 0.2);
    assert!(run_pipeline(&cfg).is_err());
}
