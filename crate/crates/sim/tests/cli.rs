use std::path::Path;
use std::process::Command;

fn skt(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_skt-sim")).args(args).env("SKT_THREADS", "2").output().unwrap();
    (out.status.code().unwrap(), String::from_utf8(out.stdout).unwrap(), String::from_utf8(out.stderr).unwrap())
}

fn write_cfg(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(skt(&[]).0, 1);
    assert_eq!(skt(&["frobnicate"]).0, 1);
    assert_eq!(skt(&["sweep", "cyclic3", "--bogus"]).0, 1);
    let (code, out, _) = skt(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("check-coeffs"));
}

#[test]
fn check_coeffs_on_cyclic3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg =
        write_cfg(dir.path(), "c.toml", "schema_version = 1\npreset = \"cyclic3\"\n[preset_params]\na_ii = 0.2\n");
    let (code, out, err) = skt(&["check-coeffs", &cfg]);
    assert_eq!(code, 0, "{err}");
    assert!(out.starts_with("detailed balance: NO; weak cross-diffusion: NO; kappa > 0: YES, kappa="), "{out}");
}

#[test]
fn sweep_reports_one_eighth() {
    let (code, out, _) = skt(&["sweep", "cyclic3", "--a-min", "0.1", "--a-max", "0.15", "--steps", "64"]);
    assert_eq!(code, 0);
    let line = out.lines().find(|l| l.starts_with("threshold (LP): ")).unwrap();
    let t: f64 = line["threshold (LP): ".len()..].parse().unwrap();
    assert!((t - 0.125).abs() <= 1e-3);
    assert_eq!(out.lines().filter(|l| l.starts_with(|c: char| c.is_ascii_digit())).count(), 64);
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = write_cfg(dir.path(), "m.toml", "schema_version = 1\n[coefficients]\na=[[1.0]]\na0=[1.0]\n");
    let (code, _, err) = skt(&["simulate", &missing]);
    assert_eq!(code, 1);
    assert!(err.contains("grid"), "{err}");
    assert_eq!(skt(&["simulate", "/nonexistent/x.toml"]).0, 1);
    let cfg = write_cfg(dir.path(), "d.toml", "schema_version = 1\npreset = \"heat1\"\n");
    assert_eq!(skt(&["dereg", &cfg, "--eps-list", "1e-4,1e-3"]).0, 1);
}

#[test]
fn simulate_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "s.toml", "schema_version = 1\npreset = \"heat1\"\n[scheme]\nt_end = 0.05\n");
    let out_dir = dir.path().join("run");
    let (code, out, err) = skt(&["simulate", &cfg, "--out-dir", out_dir.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("entropy-check failures: 0"));
    let rows = skt_sim::read_diagnostics(&out_dir.join("diagnostics.csv")).unwrap();
    assert_eq!(rows.first().unwrap().step, 0);
    assert_eq!(rows.last().unwrap().step, 50);
    let (field, t) = skt_sim::read_field(&out_dir.join("final_state.txt")).unwrap();
    assert!((t - 0.05).abs() < 1e-15);
    assert_eq!(field.grid().total_cells(), 50);
}

#[test]
fn numerical_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    // an unreachable tolerance fails at every step size down to the floor
    let cfg = write_cfg(
        dir.path(),
        "n.toml",
        "schema_version = 1\npreset = \"porous1\"\n[scheme]\nnewton_tol = 1e-300\nnewton_max_iters = 3\nt_end = 0.01\n",
    );
    let (code, _, err) = skt(&["simulate", &cfg, "--out-dir", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code, 2, "{err}");
}

#[test]
fn dereg_and_presets() {
    let dir = tempfile::tempdir().unwrap();
    let cfg =
        write_cfg(dir.path(), "d.toml", "schema_version = 1\npreset = \"skt-two-species\"\n[grid]\ncells = [32]\n");
    let (code, out, err) = skt(&["dereg", &cfg, "--eps-list", "1e-3,1e-4,1e-5", "--t-end", "0.1"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(out.lines().count(), 4);
    let (code, out, _) = skt(&["presets"]);
    assert_eq!(code, 0);
    assert!(out.lines().count() >= 5);
    let (code, dumped, _) = skt(&["presets", "--dump", "segregation"]);
    assert_eq!(code, 0);
    let reparsed = skt_sim::config::parse_config(&dumped).unwrap();
    assert_eq!(reparsed.meta.label, "segregation");
    assert_eq!(skt(&["presets", "--dump", "nope"]).0, 1);
}
