use std::fs;
use std::path::{Path, PathBuf};

use gtrack_cli::{cmd_graph_info, cmd_run, cmd_sweep, CliError, Options};
use gtrack_core::algorithms::CSV_HEADER;
use tempfile::TempDir;

const BASE: &str = r#"{
  "seed": 4,
  "problem": {"kind": "quadratic", "m": 6, "n": 3, "smoothness": 1.0, "strong_convexity": 0.05},
  "graph": {"topology": {"generator": "ring", "m": 6}},
  "algorithm": {"variant": "acc_gt_static", "mu_mode": "strongly_convex", "max_iterations": 300, "init_seed": 1}
}"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p
}

fn opts(tmp: &TempDir, text: &str, out: &str) -> Options {
    Options {
        config: write_config(tmp.path(), text),
        out: Some(tmp.path().join(out)),
        deterministic: true,
        ..Options::default()
    }
}

fn patch(text: &str, path: &str, value: serde_json::Value) -> String {
    let mut v: serde_json::Value = serde_json::from_str(text).unwrap();
    gtrack_core::config::set_path(&mut v, path, value).unwrap();
    v.to_string()
}

#[test]
fn run_writes_trace_with_fixed_header() {
    let tmp = TempDir::new().unwrap();
    let dir = cmd_run(&opts(&tmp, BASE, "out")).unwrap();
    let csv = fs::read_to_string(dir.join("trace.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
    assert_eq!(csv.lines().count(), 302);
    let certs: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("certificates.json")).unwrap()).unwrap();
    assert_eq!(certs.as_array().unwrap().len(), 2);
    assert_eq!(certs[0]["theorem_id"], "T2_gap");
}

#[test]
fn deterministic_runs_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let a = cmd_run(&opts(&tmp, BASE, "a")).unwrap();
    let b = cmd_run(&opts(&tmp, BASE, "b")).unwrap();
    for f in ["trace.csv", "certificates.json", "report.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn timestamp_header_only_without_deterministic() {
    let tmp = TempDir::new().unwrap();
    let mut o = opts(&tmp, BASE, "ts");
    o.deterministic = false;
    let dir = cmd_run(&o).unwrap();
    let report = fs::read_to_string(dir.join("report.txt")).unwrap();
    assert!(report.starts_with("# generated at unix time"));
    let csv = fs::read_to_string(dir.join("trace.csv")).unwrap();
    assert!(csv.starts_with(CSV_HEADER));
}

#[test]
fn seed_override_changes_trace_reproducibly() {
    let tmp = TempDir::new().unwrap();
    let read = |out: &str, seed: Option<u64>| {
        let mut o = opts(&tmp, BASE, out);
        o.seed = seed;
        fs::read_to_string(cmd_run(&o).unwrap().join("trace.csv")).unwrap()
    };
    let base = read("s0", None);
    let one = read("s1", Some(99));
    let two = read("s2", Some(99));
    assert_ne!(base, one);
    assert_eq!(one, two);
}

#[test]
fn step_violating_mu_hypothesis_is_a_validation_error() {
    let tmp = TempDir::new().unwrap();
    let text = patch(BASE, "algorithm.alpha", serde_json::json!(30.0));
    let err = cmd_run(&opts(&tmp, &text, "bad")).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("alpha*mu <= 1"), "{err}");
}

#[test]
fn malformed_config_and_missing_file() {
    let tmp = TempDir::new().unwrap();
    let err = cmd_run(&opts(&tmp, "{\"seed\": 1}", "x")).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let o = Options {
        config: tmp.path().join("absent.json"),
        ..Options::default()
    };
    assert!(matches!(cmd_run(&o), Err(CliError::Io { .. })));
}

#[test]
fn divergence_exits_with_three() {
    let tmp = TempDir::new().unwrap();
    let text = patch(BASE, "algorithm.alpha", serde_json::json!(19.0));
    let text = patch(&text, "algorithm.mu_mode", serde_json::json!("zero"));
    let text = patch(&text, "algorithm.max_iterations", serde_json::json!(5000));
    let err = cmd_run(&opts(&tmp, &text, "div")).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
}

#[test]
fn graph_info_static_ring() {
    let tmp = TempDir::new().unwrap();
    let text = patch(BASE, "graph.topology.m", serde_json::json!(10));
    let text = patch(&text, "problem.m", serde_json::json!(10));
    let mut out = Vec::new();
    cmd_graph_info(&opts(&tmp, &text, "gi"), &mut out).unwrap();
    let out = String::from_utf8(out).unwrap();
    assert!(out.contains("m = 10"));
    assert!(out.contains("gamma-connected: true"));
    // Metropolis ring: (1 + 2cos(2π/10))/3
    let expect = (1.0 + 2.0 * (std::f64::consts::PI / 5.0).cos()) / 3.0;
    let line = out.lines().find(|l| l.starts_with("sigma = ")).unwrap();
    let got: f64 = line["sigma = ".len()..].parse().unwrap();
    assert!((got - expect).abs() < 1e-12);
    assert!(out.contains("acc_gt_static"));
    assert!(!out.contains("Assumption violated"));
}

#[test]
fn graph_info_flags_disconnected_graph() {
    let tmp = TempDir::new().unwrap();
    let text = patch(
        BASE,
        "graph.topology",
        serde_json::json!({"generator": "explicit", "schedule": {"m": 6, "kind": "static", "edge_sets": [[[0, 1], [2, 3], [4, 5]]]}}),
    );
    let mut out = Vec::new();
    cmd_graph_info(&opts(&tmp, &text, "gd"), &mut out).unwrap();
    let out = String::from_utf8(out).unwrap();
    assert!(out.contains("Assumption violated: σ < 1 required"), "{out}");
    assert!(out.contains("gamma-connected: false"));
}

#[test]
fn graph_info_alternating_schedule_is_gamma_connected() {
    let tmp = TempDir::new().unwrap();
    let text = patch(
        BASE,
        "graph",
        serde_json::json!({"topology": {"generator": "split_ring", "m": 6, "parts": 2}, "gamma": 2}),
    );
    let mut out = Vec::new();
    cmd_graph_info(&opts(&tmp, &text, "ga"), &mut out).unwrap();
    let out = String::from_utf8(out).unwrap();
    assert!(out.contains("gamma-connected: true"), "{out}");
    assert!(out.contains("sigma_gamma = "));
}

#[test]
fn empty_sweep_behaves_like_run() {
    let tmp = TempDir::new().unwrap();
    let a = cmd_run(&opts(&tmp, BASE, "r")).unwrap();
    let b = cmd_sweep(&opts(&tmp, BASE, "s")).unwrap();
    assert!(!b.join("summary.csv").exists());
    assert_eq!(fs::read(a.join("trace.csv")).unwrap(), fs::read(b.join("trace.csv")).unwrap());
}

fn summary_rows(dir: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(dir.join("summary.csv"))
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn variant_sweep_shows_acceleration() {
    let tmp = TempDir::new().unwrap();
    let text = r#"{
      "seed": 11,
      "problem": {"kind": "quadratic", "m": 8, "n": 4, "smoothness": 1.0, "strong_convexity": 0.01, "shared_basis": true},
      "graph": {"topology": {"generator": "ring", "m": 8}},
      "algorithm": {"variant": "gt", "mu_mode": "strongly_convex", "alpha": 0.1,
                    "max_iterations": 20000, "stop_gap": 1e-7, "init_seed": 1, "diagnostics": false},
      "target_gap": 1e-6,
      "sweep": {"algorithm.variant": ["gt", "acc_gt_static"]}
    }"#;
    let mut o = opts(&tmp, text, "sweep");
    o.jobs = 2;
    let dir = cmd_sweep(&o).unwrap();
    let rows = summary_rows(&dir);
    assert_eq!(rows[0][..3], ["cell", "algorithm.variant", "final_gap"]);
    let rounds = |variant: &str| -> u64 {
        let r = rows.iter().find(|r| r[1] == variant).unwrap();
        r[3].parse().unwrap()
    };
    assert!(rounds("acc_gt_static") < rounds("gt"));
    assert!(dir.join("cell-000/trace.csv").exists());
    assert!(dir.join("cell-001/certificates.json").exists());
}

#[test]
fn ring_size_sweep_rounds_grow_with_sigma() {
    let tmp = TempDir::new().unwrap();
    let text = r#"{
      "seed": 2,
      "problem": {"kind": "quadratic", "m": 4, "n": 3, "smoothness": 1.0, "strong_convexity": 0.1},
      "graph": {"topology": {"generator": "ring", "m": 4}},
      "algorithm": {"variant": "acc_gt_static", "mu_mode": "strongly_convex", "max_iterations": 20000,
                    "stop_gap": 1e-7, "init_seed": 1, "diagnostics": false},
      "target_gap": 1e-6,
      "sweep": {"graph.topology.m": [4, 8, 16], "problem.m": [4, 8, 16]}
    }"#;
    // cross product includes mismatched sizes, which must be rejected
    let err = cmd_sweep(&opts(&tmp, text, "bad")).unwrap_err();
    assert_eq!(err.exit_code(), 2);

    let mut rounds = Vec::new();
    for m in [4, 8, 16] {
        let cell = patch(text, "graph.topology.m", serde_json::json!(m));
        let cell = patch(&cell, "problem.m", serde_json::json!(m));
        let cell = patch(&cell, "sweep", serde_json::json!({"seed": [2]}));
        let dir = cmd_sweep(&opts(&tmp, &cell, &format!("m{m}"))).unwrap();
        let rows = summary_rows(&dir);
        rounds.push(rows[1][3].parse::<u64>().unwrap());
    }
    assert!(rounds[0] < rounds[1] && rounds[1] < rounds[2], "{rounds:?}");
}

#[test]
fn sweep_is_deterministic_across_job_counts() {
    let tmp = TempDir::new().unwrap();
    let text = patch(BASE, "sweep", serde_json::json!({"seed": [1, 2, 3], "algorithm.variant": ["gt", "acc_gt_static"]}));
    let text = patch(&text, "algorithm.alpha", serde_json::json!(0.1));
    let mut a = opts(&tmp, &text, "j1");
    a.jobs = 1;
    let mut b = opts(&tmp, &text, "j4");
    b.jobs = 4;
    let (a, b) = (cmd_sweep(&a).unwrap(), cmd_sweep(&b).unwrap());
    assert_eq!(fs::read(a.join("summary.csv")).unwrap(), fs::read(b.join("summary.csv")).unwrap());
    assert_eq!(summary_rows(&a).len(), 7);
}

#[test]
fn strict_mode_reports_failed_certificate() {
    let tmp = TempDir::new().unwrap();
    // convergent, but well above the theorem step size
    let text = r#"{
      "seed": 11,
      "problem": {"kind": "quadratic", "m": 8, "n": 4, "smoothness": 1.0, "strong_convexity": 0.01, "shared_basis": true},
      "graph": {"topology": {"generator": "ring", "m": 8}},
      "algorithm": {"variant": "acc_gt_static", "mu_mode": "strongly_convex", "alpha": 0.1,
                    "max_iterations": 600, "init_seed": 1, "diagnostics": false}
    }"#;
    let dir = cmd_run(&opts(&tmp, text, "lax")).unwrap();
    let report = fs::read_to_string(dir.join("report.txt")).unwrap();
    assert!(report.contains("T2_consensus holds=false"), "{report}");
    let mut o = opts(&tmp, text, "strict");
    o.strict = true;
    assert_eq!(cmd_run(&o).unwrap_err().exit_code(), 4);

    let mut ok = opts(&tmp, BASE, "strict_ok");
    ok.strict = true;
    cmd_run(&ok).unwrap();
}
