use std::path::Path;
use std::process::{Command, Output};

use tfqkd::tables::BUNDLED_TABLES;

fn tfqkd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tfqkd")).args(args).output().expect("binary runs")
}

fn bundled_config(dir: &Path, n_windows: u64) -> String {
    let text = tfqkd::config::BUNDLED_CONFIG.replacen("n_windows = 10000000000", &format!("n_windows = {n_windows}"), 1);
    let p = dir.join("config.toml");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn keyrate_on_bundled_tables() {
    let dir = tempfile::tempdir().unwrap();
    let counts = dir.path().join("tables.csv");
    std::fs::write(&counts, BUNDLED_TABLES).unwrap();
    let out = tfqkd(&["keyrate", "--counts", counts.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = tfqkd::harness::read_reports_csv(out.stdout.as_slice()).unwrap();
    assert_eq!(rows.len(), 18);
    let c26 = rows.iter().find(|r| r.channel == "C26").unwrap();
    assert!((c26.r_bps / 103_855.2 - 1.0).abs() < 0.005);
}

#[test]
fn keyrate_invariant_violation_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let counts = dir.path().join("bad.csv");
    let text = BUNDLED_TABLES.replacen("Detected-02,1619988536", "Detected-02,999999999999", 1);
    std::fs::write(&counts, text).unwrap();
    let out = tfqkd(&["keyrate", "--counts", counts.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("C26"));
}

#[test]
fn keyrate_parse_error_exits_two_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let counts = dir.path().join("bad.csv");
    let text = BUNDLED_TABLES.replacen("Detected-02,1619988536", "Detected-02,lots", 1);
    std::fs::write(&counts, text).unwrap();
    let out = tfqkd(&["keyrate", "--counts", counts.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Detected-02") && err.contains("C26"), "{err}");
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(tfqkd(&[]).status.code(), Some(2));
    assert_eq!(tfqkd(&["simulate"]).status.code(), Some(2));
    assert_eq!(tfqkd(&["keyrate", "--counts", "/nonexistent/file.csv"]).status.code(), Some(2));
}

#[test]
fn simulate_is_deterministic_and_feeds_plotdata() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bundled_config(dir.path(), 1_000_000_000);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = tfqkd(&["simulate", "--config", &cfg, "--seed", "11", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["ledgers.csv", "reports.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = dir.path().join("c");
    let o = tfqkd(&["simulate", "--config", &cfg, "--seed", "12", "--out", c.to_str().unwrap()]);
    assert!(o.status.success());
    assert_ne!(std::fs::read(a.join("ledgers.csv")).unwrap(), std::fs::read(c.join("ledgers.csv")).unwrap());

    let plots = dir.path().join("plots");
    let reports = a.join("reports.csv");
    let o = tfqkd(&["plotdata", "--reports", reports.to_str().unwrap(), "--config", &cfg, "--out", plots.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let skr = std::fs::read_to_string(plots.join("skr.csv")).unwrap();
    assert_eq!(skr.lines().count(), 17);
    assert!(plots.join("qber.csv").exists() && plots.join("distance.csv").exists());

    // The simulated ledgers re-enter the key-rate path.
    let o = tfqkd(&["keyrate", "--counts", a.join("ledgers.csv").to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn invalid_config_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.toml");
    std::fs::write(&p, tfqkd::config::BUNDLED_CONFIG.replacen("p_v = 0.70", "p_v = 0.80", 1)).unwrap();
    let o = tfqkd(&["simulate", "--config", p.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("p_v") || err.contains("probabilit"), "{err}");
}

#[test]
fn comb_lock_writes_traces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bundled_config(dir.path(), 0);
    let out = dir.path().join("lock");
    let o = tfqkd(&["comb-lock", "--config", &cfg, "--duration", "0.01", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let pump = std::fs::read_to_string(out.join("pump_offset.csv")).unwrap();
    assert!(pump.starts_with("time_s,offset_hz"));
    let summary = String::from_utf8_lossy(&o.stdout);
    let std: f64 = summary.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!(std > 0.0 && std < 2e3, "{std}");
}

#[test]
fn validate_passes() {
    let o = tfqkd(&["validate"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = String::from_utf8_lossy(&o.stdout);
    assert!(csv.starts_with("criterion,target,measured,tolerance,verdict,severity"));
}
