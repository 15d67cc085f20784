use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn posiss(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_posiss"))
        .args(args)
        .current_dir(dir)
        .env_remove("POSISS_TOLERANCES")
        .output()
        .expect("binary runs")
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn simulate_writes_one_column_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir, "c.json", r#"{"scenario":"renewal","plan":{"t_end":2.0,"dt":0.1}}"#);
    let out = posiss(&["simulate", "--config", "c.json", "--out", "traj.csv"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("traj.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 101);
    assert_eq!(header[0], "t");
    assert_eq!(header[100], "x99");
    assert_eq!(lines.clone().count(), 21);
    assert!(lines.all(|l| l.split(',').count() == 101));
    assert!(!csv.contains('\r'));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["positivity_violations"], 0);
    assert_eq!(summary["seed"], 0);
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    write(
        &dir,
        "c.json",
        r#"{"scenario":"renewal","initial_state":"random","seed":9,
            "input":{"breakpoints":[0,0.5,1.5],"values":[1,0.25]},"plan":{"t_end":3,"dt":0.25}}"#,
    );
    let a = posiss(&["simulate", "--config", "c.json", "--out", "a.csv"], dir.path());
    let b = posiss(&["simulate", "--config", "c.json", "--out", "b.csv"], dir.path());
    assert!(a.status.success() && b.status.success());
    let fa = std::fs::read(dir.path().join("a.csv")).unwrap();
    let fb = std::fs::read(dir.path().join("b.csv")).unwrap();
    assert_eq!(fa, fb);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn input_file_is_read_relative_to_the_config() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir, "u.csv", "t,u\n0,1\n0.5,0\n");
    write(&dir, "c.json", r#"{"scenario":"renewal_two_cell","input":{"file":"u.csv"},"initial_state":"zero"}"#);
    let out = posiss(&["simulate", "--config", "c.json", "--out", "t.csv"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    let second: Vec<f64> = csv.lines().nth(2).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!(second[1] > 0.0);
}

#[test]
fn missing_input_file_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir, "c.json", r#"{"scenario":"renewal","input":{"file":"absent_input.csv"}}"#);
    let out = posiss(&["simulate", "--config", "c.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("absent_input.csv"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = posiss(&["audit", "--config", "nope.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nope.json"));

    write(&dir, "bad.json", "{ not json");
    assert_eq!(posiss(&["audit", "--config", "bad.json"], dir.path()).status.code(), Some(2));

    write(&dir, "neg.json", r#"{"scenario":{"kind":"renewal","q":1,"beta":-1,"length":1,"cells":4}}"#);
    assert_eq!(posiss(&["audit", "--config", "neg.json"], dir.path()).status.code(), Some(2));

    write(&dir, "dt.json", r#"{"scenario":"renewal_two_cell","plan":{"t_end":1,"dt":0.3}}"#);
    assert_eq!(posiss(&["simulate", "--config", "dt.json"], dir.path()).status.code(), Some(2));

    write(&dir, "ok.json", r#"{"scenario":"renewal_two_cell","audits":[]}"#);
    let out = Command::new(env!("CARGO_BIN_EXE_posiss"))
        .args(["audit", "--config", "ok.json"])
        .current_dir(dir.path())
        .env("POSISS_TOLERANCES", "sloppy")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    // implicit Euler needs 1/dt − A invertible; here 1/dt = 10 is the eigenvalue
    write(
        &dir,
        "c.json",
        r#"{"scenario":{"matrices":{"length":1,"a":[[10]]}},
            "plan":{"t_end":1,"dt":0.1,"method":"implicit_euler"}}"#,
    );
    let out = posiss(&["simulate", "--config", "c.json"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn audit_reports_the_renewal_radius() {
    let dir = tempfile::tempdir().unwrap();
    write(
        &dir,
        "c.json",
        r#"{"scenario":{"kind":"renewal","q":1.0,"beta":0.5,"length":20,"cells":1000},
            "audits":["small_gain","verdict"],"seed":5}"#,
    );
    let out = posiss(&["audit", "--config", "c.json", "--out", "r.json"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let rep: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(rep["verdict"], "eISS");
    let r = rep["small_gain"]["radius"].as_f64().unwrap();
    let h = 20.0 / 1000.0;
    assert!((r - 0.5 * (1.0 - (-20f64).exp())).abs() <= 1e-6 + h);
    assert_eq!(rep["seed"], 5);
    assert_eq!(rep["software"]["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(rep["sufficient_condition"], true);
}

#[test]
fn unstable_renewal_gets_a_witness() {
    let dir = tempfile::tempdir().unwrap();
    write(
        &dir,
        "c.json",
        r#"{"scenario":{"kind":"renewal","q":1.0,"beta":2.0,"length":20,"cells":100}}"#,
    );
    let out = posiss(&["audit", "--config", "c.json"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let rep: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rep["verdict"], "not_eISS");
    assert!(rep["witness"]["growth_factor"].as_f64().unwrap() > 1.0);
    assert!(rep["fitted"].is_null());
    assert!(rep["notes"]["gain_fit"].as_str().unwrap().contains("not_eISS"));
}

#[test]
fn skipped_audits_keep_their_keys() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir, "c.json", r#"{"scenario":"renewal_two_cell","audits":[]}"#);
    let out = posiss(&["audit", "--config", "c.json"], dir.path());
    assert!(out.status.success());
    let rep: Value = serde_json::from_slice(&out.stdout).unwrap();
    let obj = rep.as_object().unwrap();
    for key in [
        "software", "seed", "scenario", "tolerances", "audits", "s_a", "s_perturbed", "sufficient_condition",
        "inf_q_condition", "inverse_estimate", "kappa", "m_alpha", "domination", "small_gain", "verdict",
        "fitted", "witness", "notes", "warnings",
    ] {
        assert!(obj.contains_key(key), "missing {key}");
    }
    assert!(rep["verdict"].is_null() && rep["kappa"].is_null());
    assert_eq!(rep["s_a"], -2.0);
}

#[test]
fn tolerance_profile_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir, "c.json", r#"{"scenario":"renewal_two_cell","audits":[],"tolerances":{"positivity":1e-3}}"#);
    let out = Command::new(env!("CARGO_BIN_EXE_posiss"))
        .args(["audit", "--config", "c.json"])
        .current_dir(dir.path())
        .env("POSISS_TOLERANCES", "loose")
        .output()
        .unwrap();
    let rep: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rep["tolerances"]["guard_band"], 1e-6);
    assert_eq!(rep["tolerances"]["positivity"], 1e-3);
}

fn table(csv: &str) -> Vec<Vec<String>> {
    csv.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn beta_sweep_flips_at_four_thirds() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir, "c.json", r#"{"scenario":"renewal_two_cell","audit_params":{"trials":10}}"#);
    let out = posiss(
        &["sweep", "--config", "c.json", "--param", "beta0", "--values", "1.6,1.4,1.2,1.0,0.8,0.6,0.4,0.2"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.starts_with("beta0,r,s_a,s_perturbed,verdict,mu"));
    let rows = table(&csv);
    let params: Vec<f64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert!(params.windows(2).all(|w| w[0] < w[1]));
    for row in &rows {
        let beta: f64 = row[0].parse().unwrap();
        let r: f64 = row[1].parse().unwrap();
        assert!((r - 0.75 * beta).abs() < 1e-12);
        assert_eq!(row[4], if beta <= 1.2 { "eISS" } else { "not_eISS" });
        assert_eq!(row[7], "true");
    }
}

#[test]
fn cell_sweep_radius_converges_monotonically() {
    let dir = tempfile::tempdir().unwrap();
    write(
        &dir,
        "c.json",
        r#"{"scenario":{"kind":"renewal","q":1,"beta":0.5,"length":20,"cells":10},"audit_params":{"trials":4,"steps":100}}"#,
    );
    let out = posiss(&["sweep", "--config", "c.json", "--param", "n", "--values", "25,50,100,200"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let r: Vec<f64> = table(&String::from_utf8(out.stdout).unwrap())
        .iter()
        .map(|row| row[1].parse().unwrap())
        .collect();
    assert!(r.windows(2).all(|w| w[0] < w[1]), "{r:?}");
    let gaps: Vec<f64> = r.windows(2).map(|w| w[1] - w[0]).collect();
    assert!(gaps.windows(2).all(|g| g[1] < g[0]), "{r:?}");
}

#[test]
fn empty_or_invalid_sweeps_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir, "c.json", r#"{"scenario":"renewal_two_cell"}"#);
    for (param, values) in [("beta0", ""), ("beta0", ",,"), ("beta0", "1,abc"), ("gamma", "1"), ("a", "1")] {
        let out = posiss(&["sweep", "--config", "c.json", "--param", param, "--values", values], dir.path());
        assert_eq!(out.status.code(), Some(2), "{param} {values}");
    }
}
