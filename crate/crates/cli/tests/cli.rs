//! End-to-end runs of the `csmpd` binary.

use std::path::PathBuf;
use std::process::{Command, Output};

fn csmpd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csmpd")).args(args).output().expect("binary runs")
}

fn temp_config(name: &str, text: &str) -> PathBuf {
    let path = std::env::temp_dir().join(format!("csmpd-{}-{name}.toml", std::process::id()));
    std::fs::write(&path, text).unwrap();
    path
}

/// Lossless single-qubit chain with κ_b = κ_w = 2e6 /s and C = 1.
const UNIT_COOPERATIVITY: &str = r#"
[mode0]
role = "buffer"
frequency = 7.0e9
kappa_ext = 2.0e6

[mode1]
role = "waste"
frequency = 6.5e9
kappa_ext = 2.0e6

[qubit0]
frequency = 6.0e9
chi_self = -120e6
chi_left = -2.0e6
chi_right = -2.0e6
t1 = 30e-6

[pump0]
g4_hz = 159154.94309189535
"#;

#[test]
fn budget_on_bundled_fixture() {
    let out = csmpd(&["budget", "--paper-fixtures", "--format", "json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let eta = v["eta_total"].as_f64().unwrap();
    assert!((eta - 0.175).abs() < 0.01, "eta_total = {eta}");
    for key in ["alpha_q", "alpha_pump", "alpha_ro", "alpha_th"] {
        assert!(v["noise"][key].is_number(), "missing noise.{key}");
    }
    assert!(v["alpha_total"].as_f64().unwrap() > 0.0);
}

#[test]
fn unit_cooperativity_peak_is_one() {
    let path = temp_config("unit", UNIT_COOPERATIVITY);
    let out = csmpd(&["s21", "--config", path.to_str().unwrap(), "--points", "101", "--format", "csv"]);
    std::fs::remove_file(&path).ok();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("delta_hz,re,im,abs2"));
    let peak = lines.map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap()).fold(0.0, f64::max);
    assert!((peak - 1.0).abs() < 1e-9, "peak = {peak}");
}

#[test]
fn simulation_is_reproducible() {
    let args = ["simulate", "--paper-fixtures", "--flux", "0", "--duration", "150", "--seed", "7"];
    let a = csmpd(&args);
    let b = csmpd(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert!(!a.stdout.is_empty());
    assert_eq!(a.stdout, b.stdout);
    let c = csmpd(&["simulate", "--paper-fixtures", "--flux", "0", "--duration", "150", "--seed", "8"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn exit_codes() {
    assert_eq!(csmpd(&["no-such-command"]).status.code(), Some(64));
    assert_eq!(csmpd(&["budget", "--config", "/nonexistent/csmpd.toml"]).status.code(), Some(2));

    let path = temp_config("badkey", &UNIT_COOPERATIVITY.replace("kappa_ext = 2.0e6\n\n[mode1]", "kapa_ext = 2.0e6\n\n[mode1]"));
    let out = csmpd(&["bandwidth", "--config", path.to_str().unwrap()]);
    std::fs::remove_file(&path).ok();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("kapa_ext"));
}

#[test]
fn dynamics_writes_named_columns() {
    let out = csmpd(&["dynamics", "--paper-fixtures", "--format", "csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("time,n_b,n_Q0,n_m,n_Q1,n_w"));
    assert!(text.lines().count() > 100);
}
