use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_admissos"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn field<'a>(out: &'a str, key: &str) -> &'a str {
    out.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(' ')))
        .unwrap_or_else(|| panic!("no '{key}' line in:\n{out}"))
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

const HX: &str = r#"{"kind": "polynomial", "poly": {"nvars": 1, "terms": [{"exponents": [1], "coefficient": 1.0}]}}"#;
const H2X: &str = r#"{"kind": "polynomial", "poly": {"nvars": 1, "terms": [{"exponents": [1], "coefficient": 2.0}]}}"#;

#[test]
fn synth_single_integrator_emits_heuristic() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(&["synth", "builtin:single_integrator_1d", "--degree", "10", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert_eq!(field(&stdout(&o), "status"), "ok");
    for f in ["heuristic.json", "report.json", "surface.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
}

#[test]
fn synth_with_wide_measure_reports_unbounded() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(
        dir.path(),
        "wide.json",
        r#"{
  "dynamics": {"builtin": "double_integrator_1d"},
  "measure": {"kind": "box_lebesgue", "lo": [-3.0, -3.0], "hi": [3.0, 3.0]},
  "degrees": {"heuristic": 6}
}"#,
    );
    let o = run(&["synth", &f]);
    assert_eq!(code(&o), 5, "{}", stdout(&o));
}

#[test]
fn malformed_file_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "bad.json", "{\n  \"dynamics\": {\"builtin\": \"pendulum\"},\n  \"sizes\": 3\n}\n");
    let o = run(&["synth", &f, "--degree", "2"]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains(":3:"), "{err}");
    assert!(err.contains("sizes"), "{err}");
    let o = run(&["synth", &write(dir.path(), "trunc.json", "{\"dynamics\": ")]);
    assert_eq!(code(&o), 2);
}

#[test]
fn verify_linear_heuristic_reports_multipliers() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify", "builtin:single_integrator_1d", &write(dir.path(), "h.json", HX)]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["result"], "certified");
    let ms = v["multipliers"].as_array().unwrap();
    let control = ms
        .iter()
        .find(|m| m["label"].as_str().unwrap().contains("control"))
        .unwrap();
    let lam: f64 = control["polynomial"].as_str().unwrap().parse().unwrap();
    assert!((lam - 0.5).abs() < 1e-4, "{lam}");
}

#[test]
fn verify_doubled_heuristic_is_refuted() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify", "builtin:single_integrator_1d", &write(dir.path(), "h.json", H2X)]);
    assert_eq!(code(&o), 1, "{}", stdout(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["result"], "refuted");
    assert!((v["counterexample"]["value"].as_f64().unwrap() + 1.0).abs() < 1e-9);
    assert_eq!(v["counterexample"]["control"][0].as_f64().unwrap(), -1.0);
}

#[test]
fn dimension_mismatch_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify", "builtin:double_integrator_1d", &write(dir.path(), "h.json", HX)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn falsify_pendulum_thresholds() {
    let ok = run(&[
        "falsify",
        "builtin:pendulum",
        "--heuristic",
        "quadratic:0.6666666666666666",
        "--grid",
        "201,201,41",
    ]);
    assert_eq!(code(&ok), 0, "{}", stdout(&ok));
    assert_eq!(field(&stdout(&ok), "counterexample"), "none");
    let bad = run(&["falsify", "builtin:pendulum", "--heuristic", "quadratic:2", "--grid", "201,201,41"]);
    assert_eq!(code(&bad), 1);
    assert!(field(&stdout(&bad), "counterexample").starts_with("Ah2 state="));
}

#[test]
fn informed_plan_needs_fewer_iterations() {
    let zero = run(&["plan", "forest", "--heuristic", "zero"]);
    let euclid = run(&["plan", "forest", "--heuristic", "euclid"]);
    assert_eq!(code(&zero), 0);
    assert_eq!(code(&euclid), 0);
    let iters = |o: &Output| field(&stdout(o), "iterations").parse::<usize>().unwrap();
    assert!(iters(&euclid) < iters(&zero));
}

#[test]
fn plan_from_goal_costs_nothing() {
    let o = run(&["plan", "forest", "--start", "9.5,9.5"]);
    assert_eq!(code(&o), 0);
    assert_eq!(field(&stdout(&o), "cost").parse::<f64>().unwrap(), 0.0);
}

#[test]
fn plan_cap_and_exhaustion_codes() {
    let o = run(&["plan", "corridor", "--max-iterations", "1"]);
    assert_eq!(code(&o), 4);
    assert_eq!(field(&stdout(&o), "status"), "cap_reached");
    let dir = tempfile::tempdir().unwrap();
    let sealed = write(
        dir.path(),
        "sealed.json",
        r#"{
  "name": "sealed",
  "dynamics": "shortest_path2d",
  "lo": [0.0, 0.0],
  "hi": [4.0, 4.0],
  "obstacles": [{"lo": [2.0, 0.0], "hi": [2.4, 4.0]}],
  "start": [0.5, 0.5],
  "goal": {"lo": [3.0, 3.0], "hi": [3.5, 3.5]},
  "planner": {"dt": 0.4, "resolution": [0.2, 0.2], "controls": 8, "max_iterations": 100000}
}"#,
    );
    let o = run(&["plan", &sealed]);
    assert_eq!(code(&o), 3, "{}", stdout(&o));
}

#[test]
fn emitted_heuristic_round_trips_through_verify() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = run(&["synth", "builtin:single_integrator_1d", "--degree", "4", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let hfile = out.join("heuristic.json");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let h: serde_json::Value = serde_json::from_str(&fs::read_to_string(&hfile).unwrap()).unwrap();
    assert_eq!(h["poly"], report["heuristic"]);
    let residual = |o: &Output| {
        let v: serde_json::Value = serde_json::from_str(&stdout(o)).unwrap();
        assert_eq!(v["result"], "certified", "{}", stdout(o));
        v["max_residual"].as_f64().unwrap()
    };
    let a = run(&["verify", "builtin:single_integrator_1d", hfile.to_str().unwrap()]);
    let b = run(&["verify", "builtin:single_integrator_1d", hfile.to_str().unwrap()]);
    assert!((residual(&a) - residual(&b)).abs() <= 1e-10);
}

#[test]
fn csv_artifacts_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut surfaces = Vec::new();
    let mut oracles = Vec::new();
    let mut traces = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("s{k}"));
        assert_eq!(code(&run(&["synth", "builtin:double_integrator_1d", "--degree", "4", "--out", out.to_str().unwrap()])), 0);
        surfaces.push(fs::read(out.join("surface.csv")).unwrap());
        let csv = dir.path().join(format!("o{k}.csv"));
        assert_eq!(
            code(&run(&["oracle", "builtin:single_integrator_1d", "--grid", "21", "--heuristic", "euclid", "--out", csv.to_str().unwrap()])),
            0
        );
        oracles.push(fs::read(&csv).unwrap());
        let tr = dir.path().join(format!("t{k}.csv"));
        assert_eq!(code(&run(&["plan", "forest", "--trace", tr.to_str().unwrap()])), 0);
        traces.push(fs::read(&tr).unwrap());
    }
    assert_eq!(surfaces[0], surfaces[1]);
    assert_eq!(oracles[0], oracles[1]);
    assert_eq!(traces[0], traces[1]);
    assert!(!String::from_utf8_lossy(&oracles[0]).contains('"'));
}

#[test]
fn report_lists_program_blocks() {
    let o = run(&["report", "builtin:double_integrator_1d", "--degree", "4"]);
    assert_eq!(code(&o), 0);
    let s = stdout(&o);
    assert!(s.contains("block 0"));
    assert!(!s.contains("sdp-sparse"));
    assert!(run(&["report", "builtin:pendulum"]).status.success());
}

#[test]
fn help_documents_exit_codes() {
    let o = run(&["--help"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("Exit codes"));
}
