use std::path::Path;
use std::process::{Command, Output};

fn csitrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csitrack")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_without_seed_is_a_usage_error() {
    let out = csitrack(&["run", "--n-trials", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
}

#[test]
fn missing_input_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = csitrack(&["process", "--input", "/definitely/not/here.csv", "--out", path(&dir.path().join("o.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not/here.csv"));
}

#[test]
fn malformed_csv_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.csv");
    std::fs::write(&input, "packet,tx,rx,pilot_index,re,im\n1,0,0,-58,1.0,zero\n").unwrap();
    let out = csitrack(&["process", "--input", path(&input), "--out", path(&dir.path().join("o.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.csv:2:"), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_then_process() {
    let dir = tempfile::tempdir().unwrap();
    let csi = dir.path().join("sim.csv");
    let truth = dir.path().join("truth.json");
    let rec = dir.path().join("rec.csv");
    let out = csitrack(&[
        "simulate", "--seed", "4", "--n-packets", "5", "--n-tx", "1", "--n-rx", "2", "--out", path(&csi), "--truth",
        path(&truth),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(&csi).unwrap().lines().count(), 1 + 5 * 2 * 114);
    let t: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&truth).unwrap()).unwrap();
    assert!(t.is_object());

    let out = csitrack(&["process", "--input", path(&csi), "--out", path(&rec)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&rec).unwrap();
    assert!(text.starts_with("packet,tx,rx,pilot_index,omega_d,omega_0"));
    assert_eq!(text.lines().count(), 1 + 5 * 2 * 114);
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for p in [&a, &b] {
        assert!(csitrack(&["simulate", "--seed", "9", "--n-packets", "3", "--out", path(p)]).status.success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn small_run_exports_results() {
    let dir = tempfile::tempdir().unwrap();
    let out = csitrack(&[
        "run", "--seed", "1", "--n-trials", "2", "--n-packets", "10", "--snr-sweep-db", "20", "--antenna-setups", "1x1,1x2",
        "--output-dir", path(dir.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["metrics.csv", "fig1a.csv", "fig1b.csv", "fig1c.csv", "manifest.json"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    // 3 methods x 2 setups x 10 packets
    let rows = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 60);
}

#[test]
fn bad_spec_values_are_rejected() {
    let out = csitrack(&["run", "--seed", "1", "--n-trials", "0"]);
    assert_ne!(out.status.code(), Some(0));
    let out = csitrack(&["run", "--seed", "1", "--antenna-setups", "3by3"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn crlb_prints_a_table() {
    let out = csitrack(&["crlb", "--n-packets", "4"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("crlb_omega"));
    let rows: Vec<f64> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("packet"))
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn fixture_export_writes_both_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let out = csitrack(&["export-fixture", "--out-dir", path(dir.path()), "--n-packets", "12"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["reflector.csv", "reflector.json", "static.csv", "static.json"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
}
