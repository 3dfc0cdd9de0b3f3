use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn geovar(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geovar"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .env_remove("GEOVAR_THREADS")
        .output()
        .expect("binary runs")
}

fn run_config(command: &str, name: &str, dir: &Path) -> Output {
    geovar(&[command, "--config", config(name).to_str().unwrap()], dir)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap_or_else(|| panic!("not a number: {v}"))
}

#[test]
fn euclidean_geodesic_is_a_straight_line() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_config("geodesic", "euclidean_line.json", tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("trajectory.csv")).unwrap();
    let mut lines = csv.split("\r\n").filter(|l| !l.is_empty());
    assert_eq!(lines.next(), Some("t,x0,x1,v0,v1,g_vv"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|c| c.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 11);
    for r in &rows {
        assert!((r[1] - r[0]).abs() < 1e-12 && r[2].abs() < 1e-12, "{r:?}");
        assert!((r[5] - 1.0).abs() < 1e-12);
    }
    let report = read_json(&tmp.path().join("geodesic.json"));
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["periodicity"]["periodic"], false);
    // Stdout carries the same report.
    assert_eq!(serde_json::from_slice::<Value>(&out.stdout).unwrap(), report);
}

#[test]
fn sphere_equator_closes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_config("geodesic", "sphere_equator.json", tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let report = read_json(&tmp.path().join("geodesic.json"));
    assert_eq!(report["periodicity"]["periodic"], true);
    assert!((f(&report["periodicity"]["period"]) - 2.0 * PI).abs() < 1e-8);
    assert!((f(&report["auxiliary"]["length_r"]) - 2.0 * PI).abs() < 1e-8);
}

#[test]
fn conjugate_points_on_spheres() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run_config("conjugate", "sphere_meridian.json", tmp.path()).status.code(), Some(0));
    let points = read_json(&tmp.path().join("conjugate.json"))["conjugate_points"].clone();
    assert_eq!(points.as_array().unwrap().len(), 1);
    assert!((f(&points[0]["t"]) - PI).abs() < 1e-6);
    assert_eq!(points[0]["multiplicity"], 1);

    // Radius 2 written as expressions, unit-speed: conjugate at 2π.
    assert_eq!(run_config("conjugate", "expression_sphere.json", tmp.path()).status.code(), Some(0));
    let points = read_json(&tmp.path().join("conjugate.json"))["conjugate_points"].clone();
    assert!((f(&points[0]["t"]) - 2.0 * PI).abs() < 1e-6);

    assert_eq!(run_config("conjugate", "euclidean_line.json", tmp.path()).status.code(), Some(0));
    assert!(read_json(&tmp.path().join("conjugate.json"))["conjugate_points"].as_array().unwrap().is_empty());
}

#[test]
fn schwarzschild_radial_conjugate_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"schema_version": 1, "metric": {"builtin": "schwarzschild", "params": {"mass": 1}},
            "geodesic": {"position": [0, 10, 1.5707963267948966, 0], "velocity": [1.2, -0.1, 0, 0], "duration": 5}}"#,
    );
    let out = geovar(&["conjugate", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&tmp.path().join("conjugate.json"));
    assert_eq!(report["metric"]["index"], 1);
    assert!(report["conjugate_points"].is_array());
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        r#"{"schema_version": 1, "metric": {"builtin": "euclidean"}, "geodesic": {"position": [0, 0]"#,
        r#"{"schema_version": 1, "metric": {"builtin": "euclidean"}, "colour": 3}"#,
        r#"{"schema_version": 9, "metric": {"builtin": "euclidean"}}"#,
        r#"{"schema_version": 1, "metric": {"builtin": "euclidean"}}"#,
        r#"{"schema_version": 1, "metric": {"builtin": "no_such_metric"}, "geodesic": {"position": [0, 0], "velocity": [1, 0], "duration": 1}}"#,
        r#"{"schema_version": 1, "metric": {"builtin": "euclidean"}, "geodesic": {"position": [0, 0], "velocity": [1, 0], "duration": 1, "extra": 1}}"#,
        r#"{"schema_version": 1, "metric": {"components": [["1", "y"], ["0", "1"]], "dim": 2, "index": 0,
            "domain": {"lower": [-1, -1], "upper": [1, 1]}}, "geodesic": {"position": [0, 0], "velocity": [1, 0], "duration": 1}}"#,
    ];
    for text in cases {
        let cfg = write_config(tmp.path(), text);
        let out = geovar(&["geodesic", "--config", cfg.to_str().unwrap()], tmp.path());
        assert_eq!(out.status.code(), Some(2), "{text}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = geovar(&["geodesic", "--config", "/nonexistent/config.json"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let out = geovar(&["geodesic"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solver_failure_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    // Starts outside the chart.
    let cfg = write_config(
        tmp.path(),
        r#"{"schema_version": 1, "metric": {"builtin": "round_sphere"},
            "geodesic": {"position": [4.0, 0], "velocity": [1, 0], "duration": 1}}"#,
    );
    let out = geovar(&["geodesic", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bvp_examples() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run_config("bvp", "fixed_endpoints.json", tmp.path()).status.code(), Some(0));
    let r = read_json(&tmp.path().join("bvp.json"));
    assert_eq!(r["admissibility"]["verdict"], "admissible");
    assert_eq!(r["degeneracy"]["kind"], "nondegenerate");
    let v = &r["solution"]["initial_velocity"];
    assert!((f(&v[0]) - 3.0).abs() < 1e-8 && (f(&v[1]) - 4.0).abs() < 1e-8);

    // Oracle: the radial segment from (1, 0) to (3, 0), leaving the circle orthogonally.
    assert_eq!(run_config("bvp", "circle_to_point.json", tmp.path()).status.code(), Some(0));
    let r = read_json(&tmp.path().join("bvp.json"));
    let x = &r["solution"]["initial_position"];
    let v = &r["solution"]["initial_velocity"];
    assert!((f(&x[0]) - 1.0).abs() < 1e-8 && f(&x[1]).abs() < 1e-8, "{x}");
    assert!((f(&v[0]) - 2.0).abs() < 1e-8 && f(&v[1]).abs() < 1e-8, "{v}");
    assert_eq!(r["degeneracy"]["kind"], "nondegenerate");
    assert!(tmp.path().join("solution.csv").exists());

    assert_eq!(run_config("bvp", "football_diagonal.json", tmp.path()).status.code(), Some(0));
    let r = read_json(&tmp.path().join("bvp.json"));
    assert_eq!(r["admissibility"]["verdict"], "not_admissible");
    assert_eq!(r["degeneracy"]["kind"], "s1_nondegenerate");
}

#[test]
fn require_admissible_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = geovar(&["bvp", "--require-admissible", "--config", config("tangent_diagonal.json").to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(4));
    let r = read_json(&tmp.path().join("bvp.json"));
    assert_eq!(r["admissibility"]["verdict"], "not_admissible");
    assert!(r["solution"].is_null());
    // Without the flag the verdict is reported and the degenerate restriction fails the solve.
    let out = run_config("bvp", "tangent_diagonal.json", tmp.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(read_json(&tmp.path().join("bvp.json"))["error"].is_string());
    // Admissible conditions pass the gate.
    let out = geovar(&["bvp", "--require-admissible", "--config", config("fixed_endpoints.json").to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn classify_double_cover() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run_config("classify", "football_double_cover.json", tmp.path()).status.code(), Some(0));
    let r = read_json(&tmp.path().join("classify.json"));
    assert_eq!(r["degeneracy"]["kind"], "strongly_degenerate");
    assert_eq!(r["degeneracy"]["k"], 2);
    assert_eq!(r["periodicity"]["iterate_order"], 2);
    // Total energy of the double cover is four times the minimal one.
    assert!((f(&r["energies"]["total"]) - 4.0 * f(&r["energies"]["minimal"])).abs() < 1e-9 * f(&r["energies"]["total"]));
}

#[test]
fn census_is_deterministic_across_thread_counts() {
    let one = tempfile::tempdir().unwrap();
    let eight = tempfile::tempdir().unwrap();
    let cfg = config("football_census.json");
    let out = geovar(&["census", "--threads", "1", "--config", cfg.to_str().unwrap()], one.path());
    assert_eq!(out.status.code(), Some(0));
    let out = Command::new(env!("CARGO_BIN_EXE_geovar"))
        .args(["census", "--threads", "1", "--config", cfg.to_str().unwrap(), "--out", eight.path().to_str().unwrap()])
        .env("GEOVAR_THREADS", "8")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let a = std::fs::read(one.path().join("census.json")).unwrap();
    let b = std::fs::read(eight.path().join("census.json")).unwrap();
    assert_eq!(a, b);
    let r: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(r["orbits"].as_array().unwrap().len(), 1);
    assert_eq!(r["orbits"][0]["classification"]["kind"], "s1_nondegenerate");
    assert_eq!(r["member"], true);
}

#[test]
fn perturb_breaks_antipodal_degeneracy_reproducibly() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(run_config("perturb", "sphere_antipodal_perturb.json", a.path()).status.code(), Some(0));
    assert_eq!(run_config("perturb", "sphere_antipodal_perturb.json", b.path()).status.code(), Some(0));
    for name in ["perturb.json", "bump_field.csv"] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let r = read_json(&a.path().join("perturb.json"));
    assert!(f(&r["mixed_derivative"]) > 0.0);
    for entry in r["rechecks"].as_array().unwrap() {
        assert_eq!(entry["result"]["report"]["kind"], "nondegenerate", "{entry}");
        assert!(f(&entry["result"]["kernel_gap"]) > 0.0);
    }
    assert_eq!(r["montecarlo"]["trials"].as_array().unwrap().len(), 8);
    assert!(f(&r["montecarlo"]["nondegenerate_fraction"]) >= 0.95);
    let csv = std::fs::read_to_string(a.path().join("bump_field.csv")).unwrap();
    assert!(csv.starts_with("s,lambda,x0,x1,h00,h01,h11\r\n"));
    assert_eq!(csv.split("\r\n").filter(|l| !l.is_empty()).count(), 1 + 81);
}

#[test]
fn seed_flag_changes_montecarlo_draws() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = config("sphere_antipodal_perturb.json");
    assert_eq!(geovar(&["perturb", "--seed", "7", "--config", cfg.to_str().unwrap()], a.path()).status.code(), Some(0));
    assert_eq!(geovar(&["perturb", "--config", cfg.to_str().unwrap()], b.path()).status.code(), Some(0));
    let ra = read_json(&a.path().join("perturb.json"));
    let rb = read_json(&b.path().join("perturb.json"));
    assert_eq!(ra["montecarlo"]["seed"], 7);
    assert_ne!(ra["montecarlo"]["trials"], rb["montecarlo"]["trials"]);
}

fn obstruct(args: &[&str]) -> (Option<i32>, Value) {
    let out = Command::new(env!("CARGO_BIN_EXE_geovar")).arg("obstruct").args(args).output().unwrap();
    let value = serde_json::from_slice(&out.stdout).unwrap_or(Value::Null);
    (out.status.code(), value)
}

#[test]
fn obstruct_verdicts() {
    let cases: &[(&[&str], &str)] = &[
        (&["--surface", "sphere"], "no"),
        (&["--surface", "torus"], "yes"),
        (&["--surface", "klein_bottle"], "yes"),
        (&["--surface", "orientable", "--genus", "2"], "no"),
        (&["--generic", "--compact", "false", "--orientable", "true", "--dim", "4"], "yes"),
        (&["--generic", "--compact", "true", "--orientable", "true", "--dim", "4", "--chi", "-2"], "no"),
        (&["--generic", "--compact", "true", "--orientable", "false", "--dim", "4"], "unknown"),
        (&["--sphere", "4", "--index", "2"], "no"),
        (&["--sphere", "3", "--index", "2"], "yes"),
        (&["--sphere", "7", "--index", "5"], "yes"),
        (&["--sphere", "3", "--index", "0"], "yes"),
    ];
    for (args, expected) in cases {
        let (code, v) = obstruct(args);
        assert_eq!(code, Some(0), "{args:?}");
        assert_eq!(v["exists"], *expected, "{args:?}: {v}");
        assert_eq!(v["schema_version"], 1);
    }
    assert_eq!(obstruct(&["--sphere", "3", "--index", "5"]).0, Some(2));
    assert_eq!(obstruct(&["--generic", "--dim", "3"]).0, Some(2));
    assert_eq!(obstruct(&["--surface", "mobius"]).0, Some(2));
    assert_eq!(obstruct(&[]).0, Some(2));
}

#[test]
fn obstruct_writes_file_with_out() {
    let tmp = tempfile::tempdir().unwrap();
    let out = geovar(&["obstruct", "--sphere", "4", "--index", "1"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let r = read_json(&tmp.path().join("obstruct.json"));
    assert_eq!(r["exists"], "no");
    assert_eq!(r["manifold"]["kind"], "sphere");
}

#[test]
fn geodesic_outputs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        assert_eq!(run_config("geodesic", "sphere_equator.json", dir).status.code(), Some(0));
    }
    for name in ["geodesic.json", "trajectory.csv"] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
    }
}

#[test]
fn tol_flag_reaches_the_integrator() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = config("sphere_equator.json");
    assert_eq!(geovar(&["geodesic", "--tol", "1e-6", "--config", cfg.to_str().unwrap()], a.path()).status.code(), Some(0));
    assert_eq!(geovar(&["geodesic", "--tol", "1e-11", "--config", cfg.to_str().unwrap()], b.path()).status.code(), Some(0));
    let loose = f(&read_json(&a.path().join("geodesic.json"))["periodicity"]["residual"]);
    let tight = f(&read_json(&b.path().join("geodesic.json"))["periodicity"]["residual"]);
    assert!(tight < loose, "{tight} vs {loose}");
}
