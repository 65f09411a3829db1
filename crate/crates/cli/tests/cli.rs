use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ksvar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ksvar")).args(args).output().expect("binary runs")
}

fn synth(dir: &Path, seed: &str) {
    let out = ksvar(&[
        "synth", "--nodes", "4", "--samples", "80", "--rate", "20", "--density", "0.3", "--seed", seed, "--output",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_infer_metrics_compare() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "3");
    for f in ["panel.csv", "panel.meta.json", "truth.json", "synth.json"] {
        assert!(data.join(f).exists(), "{f}");
    }

    let run = |name: &str| {
        let out_dir = tmp.path().join(name);
        let out = ksvar(&[
            "infer", "--input", data.join("panel.csv").to_str().unwrap(), "--output", out_dir.to_str().unwrap(),
            "--window", "1.0", "--kernel", "linear", "--lambda", "0.5", "--rho", "10", "--aggregate", "majority:2",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        out_dir
    };
    let a = run("a");
    let b = run("b");
    // 80 samples at 20 Hz in 1 s windows.
    assert!(a.join("segment_003/edges.json").exists());
    assert!(!a.join("segment_004").exists());
    assert!(a.join("aggregate/edges.json").exists());
    assert!(a.join("manifest.json").exists());
    assert_eq!(
        fs::read(a.join("segment_002/edges.json")).unwrap(),
        fs::read(b.join("segment_002/edges.json")).unwrap()
    );

    let out = ksvar(&["metrics", a.join("segment_000/edges.json").to_str().unwrap()]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["nodes"].as_array().unwrap().len(), 4);

    let cmp = tmp.path().join("cmp");
    let out = ksvar(&["compare", a.to_str().unwrap(), b.to_str().unwrap(), "--output", cmp.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let deltas = fs::read_to_string(cmp.join("node_deltas.csv")).unwrap();
    for line in deltas.lines().skip(1) {
        assert!(line.split(',').skip(1).all(|v| v.parse::<f64>().unwrap() == 0.0), "{line}");
    }
    assert!(cmp.join("global_comparison.csv").exists());
}

#[test]
fn cv_prints_table() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "5");
    let out = ksvar(&[
        "cv", "--input", tmp.path().join("panel.csv").to_str().unwrap(), "--lag", "1", "--kernel", "linear",
        "--lambda-grid", "0.1,1,10", "--folds", "3", "--rho", "10",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("lambda,mean_error"));
    assert!(text.contains("# selected lambda"));
}

#[test]
fn conflicting_lambda_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "1");
    let out_dir = tmp.path().join("out");
    let out = ksvar(&[
        "infer", "--input", tmp.path().join("panel.csv").to_str().unwrap(), "--output", out_dir.to_str().unwrap(),
        "--lambda", "0.5", "--lambda-grid", "0.1,1",
    ]);
    assert!(!out.status.success());
    let rec: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(rec["status"], "error");
    assert!(rec["message"].as_str().unwrap().contains("lambda"));
}

#[test]
fn missing_input_reports_error_record() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ksvar(&[
        "infer", "--input", tmp.path().join("nope.csv").to_str().unwrap(), "--output",
        tmp.path().join("o").to_str().unwrap(), "--rate", "10",
    ]);
    assert!(!out.status.success());
    let rec: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(rec["status"], "error");
}

#[test]
fn toml_config_with_flag_override() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "2");
    let out_dir = tmp.path().join("out");
    let cfg = format!(
        r#"input = "{}"
output_dir = "{}"
lag = 1
kernel = "poly:d=2,c=1"
lambda = 0.3

[segmentation]
window_len_s = 2.0
overlap_s = 0.0

[solver]
rho = 10.0
"#,
        tmp.path().join("panel.csv").display(),
        out_dir.display()
    );
    let path = tmp.path().join("run.toml");
    fs::write(&path, cfg).unwrap();
    let out = ksvar(&["infer", "--config", path.to_str().unwrap(), "--window", "4.0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["segments"].as_array().unwrap().len(), 1);
    assert_eq!(manifest["config"]["kernel"], "poly:d=2,c=1");

    fs::write(&path, "input = \"x.csv\"\nbogus = 1\n").unwrap();
    let out = ksvar(&["infer", "--config", path.to_str().unwrap()]);
    assert!(!out.status.success());
}
