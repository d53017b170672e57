use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn genfrac(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_genfrac"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(|v| v.parse().unwrap_or(f64::NAN)).collect())
        .collect();
    (header, rows)
}

#[test]
fn catalog_lists_kinds_and_details() {
    let dir = tempfile::tempdir().unwrap();
    let out = genfrac(dir.path(), &["catalog"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for kind in ["stable", "tempered", "mixture"] {
        assert!(text.lines().any(|l| l.starts_with(kind)), "{text}");
    }
    let out = genfrac(dir.path(), &["catalog", "--phi", "stable:0.5"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("beta       0.5"), "{text}");
    assert!(text.contains("closed form"), "{text}");
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["catalog", "--phi", "levy:0.5"][..],
        &["kernels", "--phi", "stable:1.5"],
        &["kernels", "--phi", "stable:0.5", "--ilt", "euler:8"],
        &["gronwall", "--phi", "stable:0.5", "--random", "ten"],
        &["gronwall", "--phi", "stable:0.5"],
        &["mc", "--phi", "mixture:0.5@0.3+0.5@0.7", "--paths", "200"],
        &["mc", "--phi", "stable:0.5", "--paths", "200", "--estimate", "median"],
        &["eigen", "--phi", "stable:0.5"],
    ] {
        let out = genfrac(dir.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn zero_rhs_gives_constant_solution() {
    let dir = tempfile::tempdir().unwrap();
    let problem = dir.path().join("zero.toml");
    fs::write(&problem, "d = 2\nT = 1.0\nR = 1.0\nf0 = [0.25, -1.5]\n[rhs]\nkind = \"zero\"\n").unwrap();
    let out = genfrac(dir.path(), &["solve", "--phi", "tempered:0.5,1", "--problem", problem.to_str().unwrap(), "--N", "64"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&dir.path().join("solution.csv"));
    assert_eq!(header, ["t", "y0", "y1"]);
    assert!(rows.iter().all(|r| r[1] == 0.25 && r[2] == -1.5));
    let report = json(&dir.path().join("solve_report.json"));
    assert_eq!(report["segments"][0]["iteration_count"], 1);
    assert_eq!(report["config"]["tol"], 1e-12);
    let manifest = json(&dir.path().join("solve_manifest.json"));
    assert_eq!(manifest["command"], "solve");
    assert_eq!(manifest["grid"][1], 64);
}

#[test]
fn declared_dimension_must_match() {
    let dir = tempfile::tempdir().unwrap();
    let problem = dir.path().join("bad.toml");
    fs::write(&problem, "d = 3\nT = 1.0\nR = 1.0\nf0 = [0.25]\n[rhs]\nkind = \"zero\"\n").unwrap();
    let out = genfrac(dir.path(), &["solve", "--phi", "stable:0.5", "--problem", problem.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn picard_confinement_failure_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let problem = dir.path().join("grow.toml");
    fs::write(&problem, "T = 1.0\nR = 0.01\nf0 = [1.0]\n[rhs]\nkind = \"linear\"\nmatrix = [[50.0]]\n").unwrap();
    let out = genfrac(dir.path(), &["solve", "--phi", "stable:0.5", "--problem", problem.to_str().unwrap(), "--N", "4", "--max-iter", "2"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn random_gronwall_instances_all_pass() {
    let dir = tempfile::tempdir().unwrap();
    let out = genfrac(dir.path(), &["gronwall", "--random", "seeds=10", "--phi", "stable:0.5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&dir.path().join("gronwall_report.json"));
    assert_eq!(report["all_pass"], true);
    assert_eq!(report["count"], 10);
    let (header, rows) = read_csv(&dir.path().join("gronwall.csv"));
    assert_eq!(header[0], "seed");
    assert_eq!(rows.len(), 10);
}

#[test]
fn gronwall_instance_files_are_checked() {
    let dir = tempfile::tempdir().unwrap();
    let n = 32;
    let nodes = |f: &dyn Fn(usize) -> f64| (0..=n).map(|i| f(i).to_string()).collect::<Vec<_>>().join(", ");
    let valid = format!("T = 1.0\nx = [{}]\na = [{}]\ng = [{}]\n", nodes(&|_| 1.0), nodes(&|_| 1.0), nodes(&|_| 0.5));
    let path = dir.path().join("valid.toml");
    fs::write(&path, valid).unwrap();
    let out = genfrac(dir.path(), &["gronwall", "--phi", "stable:0.5", "--instance", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&dir.path().join("gronwall.csv"));
    assert_eq!(header, ["t", "x", "margin_series", "margin_ml", "margin_monotone"]);
    assert_eq!(rows.len(), n + 1);

    // x far above a + Bx violates the hypothesis of the inequality.
    let invalid = format!("T = 1.0\nx = [{}]\na = [{}]\ng = [{}]\n", nodes(&|_| 9.0), nodes(&|_| 1.0), nodes(&|_| 0.5));
    fs::write(&path, invalid).unwrap();
    let out = genfrac(dir.path(), &["gronwall", "--phi", "stable:0.5", "--instance", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&dir.path().join("gronwall_report.json"))["all_pass"], false);
}

#[test]
fn eigen_methods_agree_with_mittag_leffler() {
    let dir = tempfile::tempdir().unwrap();
    let out = genfrac(
        dir.path(),
        &["eigen", "--phi", "stable:0.5", "--lambda", "-1", "--T", "1", "--N", "1024", "--method", "all", "--paths", "4000"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&dir.path().join("eigen.csv"));
    assert_eq!(
        header,
        ["t", "series", "laplace", "mc", "mittag_leffler", "series-laplace", "series-mc", "laplace-mc"]
    );
    let report = json(&dir.path().join("eigen_report.json"));
    for m in report["methods"].as_array().unwrap() {
        let dev = m["max_rel_dev"].as_f64().unwrap();
        let tol = if m["method"] == "mc" { 5e-2 } else { 1e-3 };
        assert!(dev <= tol, "{m}");
    }
    assert_eq!(rows.len(), 1025);
}

#[test]
fn mc_writes_estimates_with_targets() {
    let dir = tempfile::tempdir().unwrap();
    let out = genfrac(
        dir.path(),
        &["mc", "--phi", "stable:0.5", "--paths", "2000", "--seed", "1", "--estimate", "U", "--estimate", "phiexp:-1", "--estimate", "moments:2"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut r = csv::Reader::from_path(dir.path().join("mc.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    let names: Vec<&str> = rows.iter().map(|r| &r[0]).collect();
    assert_eq!(names, ["U", "phiexp:-1", "scaled_moment:0", "scaled_moment:1", "scaled_moment:2"]);
    for row in &rows {
        let (value, se, target): (f64, f64, f64) = (row[1].parse().unwrap(), row[2].parse().unwrap(), row[3].parse().unwrap());
        assert!((value - target).abs() <= 4.0 * se + 2e-3, "{row:?}");
    }
    assert_eq!(json(&dir.path().join("mc_manifest.json"))["seed"], 1);
}

#[test]
fn output_directory_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("nested/out");
    let status = Command::new(env!("CARGO_BIN_EXE_genfrac"))
        .env("GENFRAC_OUT", &target)
        .args(["kernels", "--phi", "stable:0.5", "--N", "32"])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(target.join("kernels.csv").is_file());
    assert!(target.join("kernels_manifest.json").is_file());
}
