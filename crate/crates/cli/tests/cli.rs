use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ddsparse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddsparse"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_matrix(p: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = ddsparse(&["simulate", "--seed", "42", "-o", path(d.path())]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["X.csv", "U.csv", "W.csv", "system.json"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    let c = tempfile::tempdir().unwrap();
    ddsparse(&["simulate", "--seed", "43", "-o", path(c.path())]);
    assert_ne!(
        fs::read(a.path().join("X.csv")).unwrap(),
        fs::read(c.path().join("X.csv")).unwrap()
    );
}

#[test]
fn simulate_writes_the_fixture_verbatim() {
    let d = tempfile::tempdir().unwrap();
    let o = ddsparse(&["simulate", "--fixture", "paper", "-o", path(d.path())]);
    assert_eq!(code(&o), 0);
    let x = read_matrix(&d.path().join("X.csv"));
    assert_eq!((x.len(), x[0].len()), (6, 11));
    assert_eq!(x[0][0], 0.75274);
    assert_eq!(x[5][10], 47.8538);
    let x_text = fs::read_to_string(d.path().join("X.csv")).unwrap();
    assert!(x_text.starts_with("0.75274,1.2276,1.5028,"));
    let u = read_matrix(&d.path().join("U.csv"));
    assert_eq!(u[2][1], 0.59133);
    let w = read_matrix(&d.path().join("W.csv"));
    assert!(w.iter().flatten().all(|v| v.abs() < 1e-4));
    let sys: Value = serde_json::from_str(&fs::read_to_string(d.path().join("system.json")).unwrap()).unwrap();
    assert_eq!(sys["a_s"][0][0], 0.6);
    assert_eq!(sys["n_dims"], serde_json::json!([2, 2, 2]));
}

#[test]
fn simulate_rejects_empty_window() {
    let d = tempfile::tempdir().unwrap();
    let o = ddsparse(&["simulate", "--t", "0", "-o", path(d.path())]);
    assert_eq!(code(&o), 4);
}

#[test]
fn synthesize_fixture_records_stabilization() {
    let d = tempfile::tempdir().unwrap();
    let o = ddsparse(&["synthesize", "--fixture", "paper", "-o", path(d.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(d.path());
    assert_eq!(r["outcome"], "feasible");
    assert_eq!(r["command"], "synthesize");
    assert_eq!(r["config_hash"].as_str().unwrap().len(), 64);
    let rho = r["verification"]["true_system_spectral_radius"].as_f64().unwrap();
    assert!(rho < 1.0);
    assert_eq!(r["verification"]["pass"], true);
    let k = read_matrix(&d.path().join("K.csv"));
    assert_eq!((k.len(), k[0].len()), (3, 6));
}

#[test]
fn synthesize_rows_mode_needs_one_column_block() {
    let d = tempfile::tempdir().unwrap();
    let o = ddsparse(&[
        "synthesize",
        "--fixture",
        "paper",
        "--mode",
        "rows",
        "-o",
        path(d.path()),
    ]);
    assert_eq!(code(&o), 4);
    let o = ddsparse(&[
        "synthesize",
        "--fixture",
        "paper",
        "--mode",
        "rows",
        "--p",
        "1,1,1",
        "--q",
        "6",
        "-o",
        path(d.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(report(d.path())["verification"]["pass"], true);
}

#[test]
fn unreadable_csv_is_an_input_error() {
    let d = tempfile::tempdir().unwrap();
    let x = d.path().join("X.csv");
    fs::write(&x, "1,2,oops\n").unwrap();
    let u = d.path().join("U.csv");
    fs::write(&u, "1,2\n").unwrap();
    let b = d.path().join("B.csv");
    fs::write(&b, "1\n").unwrap();
    let o = ddsparse(&[
        "synthesize",
        "--x",
        path(&x),
        "--u",
        path(&u),
        "--b",
        path(&b),
        "-o",
        path(d.path()),
    ]);
    assert_eq!(code(&o), 4);
    let missing = d.path().join("nope.csv");
    let o = ddsparse(&["synthesize", "--x", path(&missing), "--u", path(&u), "--b", path(&b)]);
    assert_eq!(code(&o), 4);
}

#[test]
fn simulated_data_round_trips_through_synthesis_and_verification() {
    let d = tempfile::tempdir().unwrap();
    let sim = d.path().join("sim");
    let o = ddsparse(&[
        "simulate",
        "--seed",
        "5",
        "--t",
        "20",
        "--noise-scale",
        "0.001",
        "-o",
        path(&sim),
    ]);
    assert_eq!(code(&o), 0);
    let out = d.path().join("syn");
    let args = [
        "--x",
        &format!("{}/X.csv", sim.display()),
        "--u",
        &format!("{}/U.csv", sim.display()),
        "--system",
        &format!("{}/system.json", sim.display()),
        "--noise-scale",
        "0.001",
    ]
    .map(String::from);
    let mut syn: Vec<&str> = vec!["synthesize"];
    syn.extend(args.iter().map(|s| s.as_str()));
    syn.extend(["-o", path(&out)]);
    let o = ddsparse(&syn);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(report(&out)["verification"]["pass"], true);

    let mut ver: Vec<&str> = vec!["verify"];
    ver.extend(args.iter().map(|s| s.as_str()));
    let cert = out.join("certificate.json");
    let vout = d.path().join("ver");
    ver.extend(["--certificate", path(&cert), "-o", path(&vout)]);
    let o = ddsparse(&ver);
    assert_eq!(code(&o), 0);
    assert_eq!(report(&vout)["outcome"], "pass");

    // the report itself is accepted in place of the certificate
    let rep = out.join("report.json");
    let o = ddsparse(&[
        "verify",
        &args[0],
        &args[1],
        &args[2],
        &args[3],
        &args[4],
        &args[5],
        &args[6],
        &args[7],
        "--certificate",
        path(&rep),
        "-o",
        path(&vout),
    ]);
    assert_eq!(code(&o), 0);
}

#[test]
fn certificate_fails_against_other_data() {
    let d = tempfile::tempdir().unwrap();
    let syn = d.path().join("syn");
    ddsparse(&["synthesize", "--fixture", "paper", "-o", path(&syn)]);
    let sim = d.path().join("sim");
    let o = ddsparse(&[
        "simulate",
        "--seed",
        "3",
        "--t",
        "12",
        "--density",
        "1",
        "--noise-scale",
        "0.01",
        "-o",
        path(&sim),
    ]);
    assert_eq!(code(&o), 0);
    let o = ddsparse(&[
        "verify",
        "--x",
        path(&sim.join("X.csv")),
        "--u",
        path(&sim.join("U.csv")),
        "--system",
        path(&sim.join("system.json")),
        "--noise-scale",
        "0.01",
        "--certificate",
        path(&syn.join("certificate.json")),
        "-o",
        path(&d.path().join("v")),
    ]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn sparsify_fixture_writes_report_and_trace() {
    let d = tempfile::tempdir().unwrap();
    let o = ddsparse(&[
        "sparsify",
        "--fixture",
        "paper",
        "--max-iter",
        "50",
        "-o",
        path(d.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(d.path());
    assert_eq!(r["details"]["converged"], true);
    assert!(r["details"]["iterations"].as_u64().unwrap() <= 50);
    assert!(r["bcard"].as_u64().is_some());
    assert_eq!(r["trace"], "trace.json");
    let csv = fs::read_to_string(d.path().join("trace.csv")).unwrap();
    assert!(csv.starts_with("t,bcard,f_value"));
    assert_eq!(
        csv.lines().count(),
        r["details"]["iterations"].as_u64().unwrap() as usize + 2
    );
    let svg = fs::read_to_string(d.path().join("trace.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    let trace: Value = serde_json::from_str(&fs::read_to_string(d.path().join("trace.json")).unwrap()).unwrap();
    assert_eq!(trace["converged"], true);
}

#[test]
fn sparsify_with_no_iterations_reports_only_the_start() {
    let d = tempfile::tempdir().unwrap();
    let o = ddsparse(&[
        "sparsify",
        "--fixture",
        "paper",
        "--max-iter",
        "0",
        "-o",
        path(d.path()),
    ]);
    assert_eq!(code(&o), 3);
    let r = report(d.path());
    assert_eq!(r["details"]["iterations"], 0);
    assert_eq!(r["details"]["converged"], false);
    let trace: Value = serde_json::from_str(&fs::read_to_string(d.path().join("trace.json")).unwrap()).unwrap();
    assert_eq!(trace["states"].as_array().unwrap().len(), 1);
}

#[test]
fn epsilon_weights_are_recorded() {
    let d = tempfile::tempdir().unwrap();
    let o = ddsparse(&[
        "sparsify",
        "--fixture",
        "paper",
        "--weights",
        "epsilon",
        "--eps",
        "1e-5",
        "--max-iter",
        "2",
        "-o",
        path(d.path()),
    ]);
    assert!([0, 3].contains(&code(&o)));
    let r = report(d.path());
    assert_eq!(r["details"]["provenance"]["weight_mode"]["mode"], "epsilon");
    assert_eq!(r["details"]["provenance"]["weight_mode"]["eps"], 1e-5);
}

#[test]
fn config_file_overrides_flags() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("run.json");
    fs::write(&cfg, r#"{"fixture": "paper", "max_iter": 0}"#).unwrap();
    let o = ddsparse(&[
        "sparsify",
        "--max-iter",
        "50",
        "--config",
        path(&cfg),
        "-o",
        path(d.path()),
    ]);
    assert_eq!(code(&o), 3);
    assert_eq!(report(d.path())["config"]["max_iter"], 0);
    fs::write(&cfg, r#"{"no_such_key": 1}"#).unwrap();
    let o = ddsparse(&[
        "sparsify",
        "--fixture",
        "paper",
        "--config",
        path(&cfg),
        "-o",
        path(d.path()),
    ]);
    assert_eq!(code(&o), 4);
}

#[test]
fn exhaustive_on_fixture_with_at_most_four_blocks() {
    let d = tempfile::tempdir().unwrap();
    let o = ddsparse(&[
        "exhaustive",
        "--fixture",
        "paper",
        "--max-ones",
        "4",
        "-o",
        path(d.path()),
    ]);
    assert!([0, 2].contains(&code(&o)), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(d.path());
    assert!(r["details"]["enumerated"].as_u64().unwrap() <= 256);
    if code(&o) == 2 {
        assert_eq!(r["details"]["enumerated"], 256);
    }
}

#[test]
fn exhaustive_budget_and_guard() {
    let d = tempfile::tempdir().unwrap();
    let o = ddsparse(&[
        "exhaustive",
        "--fixture",
        "paper",
        "--budget",
        "1",
        "-o",
        path(d.path()),
    ]);
    assert_eq!(code(&o), 3);
    assert_eq!(report(d.path())["outcome"], "budget_exhausted");
    // 5 scalar agents give 25 pattern bits, past the guard
    let sim = d.path().join("sim");
    ddsparse(&[
        "simulate",
        "--agents",
        "5",
        "--n-i",
        "1",
        "--m-i",
        "1",
        "--t",
        "15",
        "-o",
        path(&sim),
    ]);
    let o = ddsparse(&[
        "exhaustive",
        "--x",
        path(&sim.join("X.csv")),
        "--u",
        path(&sim.join("U.csv")),
        "--system",
        path(&sim.join("system.json")),
        "-o",
        path(d.path()),
    ]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn reproduce_reports_every_criterion() {
    let o = ddsparse(&["reproduce-paper", "--json", "--fuzz-systems", "3"]);
    let v: Value = serde_json::from_slice(&o.stdout).expect("JSON verdict");
    let criteria = v["criteria"].as_array().unwrap();
    assert_eq!(criteria.len(), 9);
    let all = criteria.iter().all(|c| c["pass"] == true);
    assert_eq!(v["all_pass"], all);
    assert_eq!(code(&o), if all { 0 } else { 1 });
}

#[test]
fn reproduce_detects_corrupted_fixture() {
    let o = ddsparse(&["reproduce-paper", "--corrupt-fixture", "--fuzz-systems", "1"]);
    assert_eq!(code(&o), 1);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("[FAIL] 9 fixture self-consistency"), "{text}");
    assert!(text.contains("FAILED:"));
}
