use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ionchain(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ionchain"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.toml");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const QUENCH: &str = r#"
kind = "quench"
seed = 4

[params]
t_max_s = 0.004
steps = 40

[params.power_law]
ion_count = 8
j0_hz = 400.0
alpha = 1.1
"#;

#[test]
fn quench_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), QUENCH);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = ionchain(&["run", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["magnetization.csv", "result.json"] {
        let x = fs::read(a.join(name)).unwrap();
        let y = fs::read(b.join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
    let csv = fs::read_to_string(a.join("magnetization.csv")).unwrap();
    assert!(csv.starts_with("t_s,sz_1,sz_2,sz_3,sz_4,sz_5,sz_6,sz_7,sz_8\n"));
    assert_eq!(csv.lines().count(), 42);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["input"]["kind"], "quench");
    assert_eq!(summary["input"]["seed"], 4);
    assert!(summary["runtime_s"].is_number());
    assert!(summary["versions"]["ionchain"].is_string());
}

#[test]
fn compensate_emits_table_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "kind = \"compensate\"\nseed = 11\n");
    let out = dir.path().join("comp");
    let o = ionchain(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("compensation.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "frequency_hz,ambient_microgauss,residual_microgauss,waveform_amplitude_rad_s,waveform_phase_rad"
    );
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|c| c.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 3);
    for r in rows {
        assert!(r[2] <= 0.1 * r[1], "residual {} of {}", r[2], r[1]);
    }
}

#[test]
fn flags_override_seed_and_format() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "kind = \"survival\"\nseed = 1\nformat = \"csv\"\n[params]\nlifetime_s = 29.2\nhorizon_s = 60.0\ntrials = 1000\n");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(ionchain(&["run", &cfg, "--out", a.to_str().unwrap(), "--format", "json"]).status.success());
    assert!(ionchain(&["run", &cfg, "--out", b.to_str().unwrap(), "--format", "json", "--seed", "2"]).status.success());
    let x = fs::read_to_string(a.join("data.json")).unwrap();
    let y = fs::read_to_string(b.join("data.json")).unwrap();
    assert!(!a.join("survival.csv").exists());
    assert_ne!(x, y);
}

#[test]
fn validation_lists_every_field_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "kind = \"wavefront-semiclassical\"\n[params]\ntrap_hz = -5.0\ntemperature_k = -1.0\ntilt_rad = 0.01\nt_wait_min_us = 3.0\nt_wait_max_us = 1.0\n",
    );
    let out = dir.path().join("never");
    let o = ionchain(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    for field in ["params.trap_hz", "params.temperature_k", "params.t_wait_max_us"] {
        assert!(err.contains(field), "missing {field} in {err}");
    }
    assert!(!out.exists());
}

#[test]
fn numerical_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "kind = \"cpmg-sense\"\n[params]\nshots = 0\ncomponents = [{ frequency_hz = 50.0, field_microgauss = 0.0 }]\n",
    );
    let out = dir.path().join("never");
    let o = ionchain(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.exists());
}

#[test]
fn unknown_kinds_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "kind = \"teleport\"\n");
    let o = ionchain(&["run", &cfg, "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = ionchain(&["figure", "fig99", "--out", dir.path().join("y").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn figure_bundles_have_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("fig3", "heating.csv", "axial_hz,ion_count,normalized_rate,sigma"),
        ("fig4c", "cpmg_scan.csv", "t0_s,p_up_before,p_up_after,fit_before,fit_after"),
        ("fig11", "fock_cpmg.csv", "t_wait_periods,ratio_0.5,ratio_1,ratio_5,ratio_50"),
    ];
    for (kind, file, header) in cases {
        let out = dir.path().join(kind);
        let o = ionchain(&["figure", kind, "--out", out.to_str().unwrap(), "--seed", "5"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let csv = fs::read_to_string(out.join(file)).unwrap();
        assert_eq!(csv.lines().next().unwrap(), header);
    }
}
