//! Black-box checks of the command-line binary: exit codes, machine-readable
//! failures, deterministic outputs, and the saved-trajectory round trip.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_collapse-lab"))
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("collapse_lab_test_{name}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn simulate_kepler_preset_end_to_end() {
    let dir = tmp_dir("sim");
    let cfg = dir.join("kepler.json");
    std::fs::write(&cfg, r#"{"schema": 1, "preset": "kepler_pair"}"#).unwrap();
    let out = bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("kepler_pair_summary.json")).unwrap())
            .unwrap();
    let t_est = summary["t_est"].as_f64().unwrap();
    let t_exact = std::f64::consts::PI / 2f64.sqrt();
    assert!(
        ((t_est - t_exact) / t_exact).abs() < 1e-6,
        "summary T_est {t_est}"
    );
    assert!(dir.join("kepler_pair_trajectory.csv").exists());
    // CSV header carries the fixed column schema
    let csv = std::fs::read_to_string(dir.join("kepler_pair_trajectory.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(
        header,
        "t,tau,q0x,q0y,q1x,q1y,v0x,v0y,v1x,v1y,r_g,v,theta,mu,u_g,k_g,h_g,j_g"
    );
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn malformed_config_reports_field_and_fails() {
    let dir = tmp_dir("bad");
    let cfg = dir.join("bad.json");
    std::fs::write(
        &cfg,
        r#"{"schema": 1, "preset": "kepler_pair", "bogus_field": 1}"#,
    )
    .unwrap();
    let out = bin().args(["simulate", "--config"]).arg(&cfg).output().unwrap();
    assert!(!out.status.success(), "malformed config must fail");
    let stdout = String::from_utf8_lossy(&out.stdout);
    let last_line = stdout.lines().last().unwrap_or("");
    let err: serde_json::Value = serde_json::from_str(last_line).expect("json error object");
    assert_eq!(err["status"], "error");
    assert!(
        err["reason"].as_str().unwrap().contains("bogus_field"),
        "reason must name the offending field: {}",
        err["reason"]
    );
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn outputs_are_deterministic_for_fixed_seed() {
    let dir = tmp_dir("det");
    let run = |sub: &str| -> Vec<u8> {
        let out_dir = dir.join(sub);
        std::fs::create_dir_all(&out_dir).unwrap();
        let out = bin()
            .args(["cc", "--masses", "1,1,1", "--multistart", "120", "--seed", "9"])
            .arg("--out")
            .arg(&out_dir)
            .output()
            .unwrap();
        assert!(out.status.success());
        std::fs::read(out_dir.join("cc_catalog.json")).unwrap()
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a, b, "catalogs must be byte-identical for the same seed");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn cc_command_finds_the_classical_multipliers() {
    let out = bin()
        .args(["cc", "--masses", "1,1,1", "--multistart", "150", "--seed", "3"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("3.000000000"), "{stdout}");
    assert!(stdout.contains("3.535533906"), "{stdout}");
}

#[test]
fn segment_command_self_test() {
    let dir = tmp_dir("seg");
    let cfg = dir.join("seg.json");
    std::fs::write(&cfg, r#"{"schema": 1, "case": "linear_saddle"}"#).unwrap();
    let out = bin()
        .args(["segment", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.join("segment_linear_saddle.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["report"]["verified"], true);
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn spin_on_kepler_is_zero_and_rates_reload_from_csv() {
    let dir = tmp_dir("spin");
    let cfg = dir.join("kepler.json");
    std::fs::write(&cfg, r#"{"schema": 1, "preset": "kepler_pair"}"#).unwrap();
    // head-on pair: mu is identically zero, so the spin integral vanishes
    let out = bin()
        .args(["spin", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let spin: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.join("kepler_pair_spin.json")).unwrap(),
    )
    .unwrap();
    assert!(spin["spin_total"].as_f64().unwrap().abs() < 1e-10);

    // simulate, then re-run the rate verification from the saved CSV
    let out = bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    let out = bin()
        .args(["rates", "--traj"])
        .arg(dir.join("kepler_pair_trajectory.csv"))
        .arg("--summary")
        .arg(dir.join("kepler_pair_summary.json"))
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rates: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.join("kepler_pair_rates.json")).unwrap(),
    )
    .unwrap();
    let a_hat = rates["rates"]["a_hat"].as_f64().unwrap();
    assert!((a_hat / 2.1633743554611122 - 1.0).abs() < 1e-3, "A from CSV {a_hat}");
    let _ = std::fs::remove_dir_all(&dir);
}
