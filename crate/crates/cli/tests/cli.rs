use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_delaymargin"));
    c.env_remove("DELAYMARGIN_THREADS");
    c
}

fn systems() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../systems")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn strip_timings(v: &mut Value) {
    match v {
        Value::Object(m) => {
            m.retain(|k, _| !k.contains("elapsed") && !k.contains("seconds") && !k.contains("timing"));
            m.values_mut().for_each(strip_timings);
        }
        Value::Array(a) => a.iter_mut().for_each(strip_timings),
        _ => {}
    }
}

fn integrator() -> String {
    systems().join("delayed_integrator.json").display().to_string()
}

#[test]
fn analyze_stable_system_exits_zero_with_stable_verdict() {
    let o = run(&["analyze", &integrator()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["stability"]["verdict"], "stable");
    assert!(v["system_hash"].as_str().unwrap().len() == 64);
}

#[test]
fn analyze_is_deterministic() {
    let mut a: Value = serde_json::from_slice(&run(&["analyze", &integrator()]).stdout).unwrap();
    let mut b: Value = serde_json::from_slice(&run(&["analyze", &integrator()]).stdout).unwrap();
    strip_timings(&mut a);
    strip_timings(&mut b);
    assert_eq!(a, b);
}

#[test]
fn unstable_system_is_data_not_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let sys = write(
        dir.path(),
        "h16.json",
        r#"{"n":1,"p":1,"A":[[0]],"B":[[1]],"discrete":[{"delay":1.6,"matrix":[[-1]]}],"perturbation":{"mu":[1.0]}}"#,
    );
    let o = run(&["analyze", &sys]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["stability"]["verdict"], "unstable");
}

#[test]
fn inconclusive_stability_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", r#"{"contour":{"separation":1e6}}"#);
    let o = run(&["--config", &cfg, "analyze", &integrator()]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["stability"]["verdict"], "inconclusive");
}

#[test]
fn malformed_json_reports_line_and_field() {
    let dir = tempfile::tempdir().unwrap();
    let sys = write(dir.path(), "bad.json", "{\n  \"n\": 1,\n  \"p\": 1,\n  \"A\": [[\"x\"]],\n  \"B\": [[1]]\n}\n");
    let o = run(&["analyze", &sys]);
    assert_eq!(code(&o), 2);
    let e = stderr(&o);
    assert!(e.contains("bad.json:4:") && e.contains("A[0][0]"), "{e}");
}

#[test]
fn missing_file_and_unknown_theorem_are_input_errors() {
    assert_eq!(code(&run(&["analyze", "/nonexistent/system.json"])), 2);
    assert_eq!(code(&run(&["margin", &integrator(), "--theorem", "no_such_theorem"])), 2);
}

#[test]
fn unknown_config_key_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", r#"{"hinf":{"bogus":1}}"#);
    let o = run(&["--config", &cfg, "analyze", &integrator()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("bogus"), "{}", stderr(&o));
}

#[test]
fn thread_cap_is_validated() {
    let bad = bin().env("DELAYMARGIN_THREADS", "0").args(["analyze", &integrator()]).output().unwrap();
    assert_eq!(code(&bad), 2);
    let junk = bin().env("DELAYMARGIN_THREADS", "many").args(["analyze", &integrator()]).output().unwrap();
    assert_eq!(code(&junk), 2);
    let one = bin().env("DELAYMARGIN_THREADS", "1").args(["analyze", &integrator()]).output().unwrap();
    assert_eq!(code(&one), 0, "{}", stderr(&one));
}

#[test]
fn margin_writes_report_atomically() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("margin.json");
    let o = run(&["margin", &integrator(), "--theorem", "thm31_hinf", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["margin"]["theorem"], "thm31_hinf");
    let leftovers: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(leftovers.len(), 1);
}

#[test]
fn margin_keys_keep_a_stable_order() {
    let o = run(&["margin", &integrator(), "--theorem", "thm31_bibo"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let pos = |k: &str| text.find(&format!("\"{k}\"")).unwrap();
    assert!(pos("system_hash") < pos("margin") && pos("margin") < pos("stability"));
}

#[test]
fn simulate_csv_has_header_and_zero_input_stays_at_rest() {
    let o = run(&["simulate", &integrator(), "--input", "zero", "--T", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut rdr = csv::Reader::from_reader(o.stdout.as_slice());
    let header = rdr.headers().unwrap().clone();
    assert_eq!(&header[0], "t");
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        assert_eq!(rec.len(), header.len());
        assert!(rec.iter().skip(1).all(|f| f.parse::<f64>().unwrap() == 0.0));
        rows += 1;
    }
    assert!(rows > 10);
}

#[test]
fn simulate_out_prints_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run.csv");
    let o = run(&["simulate", &integrator(), "--input", "sin:1:0.7", "--T", "10", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["diverged"], false);
    assert!(std::fs::read_to_string(&out).unwrap().starts_with("t,"));
}

#[test]
fn simulate_flags_divergence_of_unstable_loop() {
    let dir = tempfile::tempdir().unwrap();
    let sys = write(dir.path(), "h2.json", r#"{"n":1,"p":1,"A":[[0]],"B":[[1]],"discrete":[{"delay":2.0,"matrix":[[-1]]}]}"#);
    let out = dir.path().join("run.csv");
    let o = run(&["simulate", &sys, "--T", "300", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["diverged"], true);
    assert_eq!(v["linf_x"], "inf");
}

#[test]
fn bad_input_spec_is_an_input_error() {
    assert_eq!(code(&run(&["simulate", &integrator(), "--input", "sin:1"])), 2);
    assert_eq!(code(&run(&["simulate", &integrator(), "--T", "-1"])), 2);
}

#[test]
fn reproduce_prints_table_and_json() {
    let text = run(&["reproduce"]);
    assert_eq!(code(&text), 0, "{}", stderr(&text));
    assert!(!text.stdout.is_empty());
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("repro.json");
    let js = run(&["reproduce", "--json", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&js), 0);
    let a: Value = serde_json::from_slice(&js.stdout).unwrap();
    let b: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(a, b);
}
