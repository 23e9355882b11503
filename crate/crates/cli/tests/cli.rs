use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn dpnc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpnc")).args(args).env_remove("DPNC_OUT_DIR").output().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SHORT_RUN: &str = r#"{
  "problem": { "kind": "estimation_paper" },
  "topology": { "kind": "builtin", "name": "ring_plus_chord", "agents": 5 },
  "schedule": { "kind": "piecewise_paper", "lambda0": 0.02, "switch_k": 500, "scale": 1.0 },
  "variance": 0.5,
  "iterations": 200,
  "init": { "mode": "random_box" },
  "seed": 12,
  "record_every": 10
}"#;

#[test]
fn run_writes_trace_and_summary() {
    let out = tempfile::tempdir().unwrap();
    let cfg = configs().join("estimation_paper.json");
    let o = dpnc(&["run", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.path().join("estimation_trace.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "k,lambda,consensus_error,opt_error_mean,opt_error_max,noise_norm");
    assert_eq!(lines.len(), 1 + 3000 / 10 + 1);
    assert!(lines[1].starts_with("0,"));
    assert!(lines.last().unwrap().starts_with("3000,"));
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("estimation_summary.json")).unwrap()).unwrap();
    for key in ["final_state", "final_metrics", "config_fingerprint", "seed"] {
        assert!(summary.get(key).is_some(), "missing {key}");
    }
    assert_eq!(summary["seed"], 20240101);
}

#[test]
fn same_seed_gives_identical_bytes_and_seed_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.json", SHORT_RUN);
    let read = |sub: &str, extra: &[&str]| {
        let out = dir.path().join(sub);
        let mut args = vec!["run", "--config", &cfg, "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        assert!(dpnc(&args).status.success());
        std::fs::read(out.join("trace.csv")).unwrap()
    };
    let a = read("a", &[]);
    assert_eq!(a, read("b", &["--jobs", "3"]));
    assert_ne!(a, read("c", &["--seed", "13"]));
    let coarse = read("d", &["--record-every", "100"]);
    assert_eq!(String::from_utf8(coarse).unwrap().lines().count(), 1 + 3);
}

#[test]
fn out_dir_env_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.json", SHORT_RUN);
    let target = dir.path().join("from_env");
    let o = Command::new(env!("CARGO_BIN_EXE_dpnc"))
        .args(["run", "--config", &cfg])
        .env("DPNC_OUT_DIR", &target)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(target.join("trace.csv").exists());
}

#[test]
fn non_contracting_matrix_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let body = SHORT_RUN.replace(
        r#"{ "kind": "builtin", "name": "ring_plus_chord", "agents": 5 }"#,
        r#"{ "kind": "matrix", "rows": [[1.0, 0.0], [0.0, 1.0]] }"#,
    );
    let body = body.replace(
        r#"{ "kind": "estimation_paper" }"#,
        r#"{ "kind": "custom_quadratic", "diag": [1.0], "centers": [[0.0], [1.0]] }"#,
    );
    let cfg = write_config(dir.path(), "bad.json", &body);
    let o = dpnc(&["run", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("SpectralGapViolation"), "{}", stderr(&o));
}

#[test]
fn unknown_key_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let body = SHORT_RUN.replace(r#"  "seed": 12,"#, "  \"seed\": 12,\n  \"sigma\": 0.5,");
    let cfg = write_config(dir.path(), "typo.json", &body);
    let o = dpnc(&["run", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("sigma") && err.contains("line 9"), "{err}");
}

#[test]
fn divergence_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"{
      "problem": { "kind": "custom_quadratic", "diag": [-50.0], "centers": [[0.0], [0.0], [0.0]] },
      "topology": { "kind": "builtin", "name": "complete", "agents": 3 },
      "schedule": { "kind": "constant", "lambda0": 0.9 },
      "variance": 0.1,
      "iterations": 2000,
      "init": { "mode": "explicit", "coords": [[1.0], [2.0], [3.0]] },
      "seed": 1
    }"#;
    let cfg = write_config(dir.path(), "diverge.json", body);
    let o = dpnc(&["run", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn single_run_cells_have_zero_spread() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!(r#"{{ "base": {SHORT_RUN}, "variances": [0.1, 0.3], "runs_per_cell": 1 }}"#);
    let cfg = write_config(dir.path(), "sweep.json", &body);
    let o = dpnc(&["table1", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("table1.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(csv.lines().next().unwrap(), "sigma,mean_final_error,std_final_error,runs");
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert_eq!(r[2].parse::<f64>().unwrap(), 0.0);
        assert_eq!(r[3], "1");
    }
}

#[test]
fn coupling_json_schema() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"{
      "problem": { "kind": "estimation_paper" },
      "topology": { "kind": "builtin", "name": "ring_plus_chord", "agents": 5 },
      "schedule": { "kind": "piecewise_paper", "lambda0": 0.02, "switch_k": 500, "scale": 1.0 },
      "variance": 0.5,
      "runs": 4,
      "horizon": 300,
      "seed": 3
    }"#;
    let cfg = write_config(dir.path(), "coupling.json", body);
    let o = dpnc(&["coupling", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("coupling.json")).unwrap()).unwrap();
    let runs = v["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 4);
    assert_eq!(v["total_runs"], 4);
    let escaped = runs.iter().filter(|r| !r["escape_iteration"].is_null()).count();
    assert_eq!(v["escape_count"].as_u64().unwrap() as usize, escaped);
    assert_eq!(v["e1"].as_array().unwrap().len(), 2);
    assert_eq!(v["escape_radius"], 0.5);
}

#[test]
fn privacy_report_rows_and_zero_horizon() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"{ "schedule": { "kind": "constant", "lambda0": 0.02 }, "variance": 0.0103, "delta": 0.05, "horizon": 5, "nu": 1.0, "samples_per_agent": 160 }"#;
    let cfg = write_config(dir.path(), "privacy.json", body);
    let o = dpnc(&["privacy-report", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("privacy.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "k,lambda,eps_sample,eps_gradient,eps_variable,delta,variance");
    assert_eq!(lines.len(), 6);
    let eps_gradient: f64 = lines[1].split(',').nth(3).unwrap().parse().unwrap();
    assert!((eps_gradient - 0.5).abs() < 1e-3);

    let cfg = write_config(dir.path(), "zero.json", &body.replace(r#""horizon": 5"#, r#""horizon": 0"#));
    assert_eq!(
        dpnc(&["privacy-report", "--config", &cfg, "--out", dir.path().to_str().unwrap()]).status.code(),
        Some(1)
    );
}

#[test]
fn verify_passes() {
    let o = dpnc(&["verify"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().all(|l| !l.starts_with("FAIL")));
    assert!(stdout.contains("minimum") && stdout.contains("strict_saddle"), "{stdout}");
}

#[test]
fn bundled_configs_parse() {
    let check = |name: &str, f: fn(&str) -> bool| {
        let text = std::fs::read_to_string(configs().join(name)).unwrap();
        assert!(f(&text), "{name}");
    };
    use dpnc_core::config::{parse_json, CouplingConfig, PrivacyConfig, RunConfig, SweepConfig};
    for name in ["estimation_paper.json", "estimation_saddle.json", "ica.json"] {
        check(name, |t| parse_json::<RunConfig>(t).is_ok_and(|c| c.validate().is_ok()));
    }
    check("table1.json", |t| parse_json::<SweepConfig>(t).is_ok());
    check("coupling_saddle.json", |t| parse_json::<CouplingConfig>(t).is_ok());
    check("coupling_zero_variance.json", |t| parse_json::<CouplingConfig>(t).is_ok());
    check("privacy_estimation.json", |t| parse_json::<PrivacyConfig>(t).is_ok_and(|c| c.resolve_inputs().is_ok()));
}
