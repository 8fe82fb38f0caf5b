use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tailwarn::cli::{parse_args, Command as Cmd};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tailwarn"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn fold_prints_tangency() {
    let out = run(&["fold", "--family", "tanh-shift", "--epsilon", "0.1", "--side", "lower"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x_star,a_star"));
    let v: Vec<f64> = lines.next().unwrap().split(',').map(|s| s.parse().unwrap()).collect();
    assert!((v[0] - (2.0 + 3f64.sqrt()).ln()).abs() < 1e-9);
    assert!((v[1] - 0.3151).abs() < 1e-4);
}

#[test]
fn estimate_on_sample_series() {
    let dir = tempfile::tempdir().unwrap();
    let input = repo().join("reproduce/sample_series.csv");
    let out = run(&[
        "estimate",
        "--input",
        input.to_str().unwrap(),
        "--methods",
        "leading,higher,interval",
        "--output",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let est = dir.path().join("estimates.csv");
    assert_eq!(header(&est), "a,lambda_true,method,boundary_mode,n,b,q,realization,lambda_hat,abs_error,status");
    let text = std::fs::read_to_string(&est).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].contains(",leading,estimated,"));
    assert!(dir.path().join("manifest.txt").exists());
}

#[test]
fn config_errors_exit_two_with_json() {
    for (args, code, key) in [
        (vec!["estimate", "--q", "1.5"], "RangeViolation", "q"),
        (vec!["estimate", "--nonsense", "1"], "UnknownKey", "nonsense"),
        (vec!["grid-study", "--realizations", "many"], "TypeMismatch", "realizations"),
    ] {
        let out = run(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let v: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
        assert_eq!(v["module"], "cli");
        assert_eq!(v["code"], code);
        assert!(v["message"].as_str().unwrap().contains(key));
    }
}

#[test]
fn runtime_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["estimate", "--input", "/nonexistent/series.csv", "--output", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["module"], "io");
    let out = run(&["ulam", "--family", "tanh-shift", "--a", "0.4", "--seed-points", "3", "--output", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!((v["module"].as_str(), v["code"].as_str()), (Some("dynamics"), Some("NoInterval")));
}

fn small_grid(dir: &Path, jobs: &str) -> Output {
    run(&[
        "grid-study",
        "--family",
        "linear",
        "--a-grid",
        "0.3,0.6",
        "--n",
        "5000",
        "--b",
        "50",
        "--realizations",
        "3",
        "--methods",
        "leading,higher,interval",
        "--seed",
        "17",
        "--jobs",
        jobs,
        "--output",
        dir.to_str().unwrap(),
    ])
}

#[test]
fn grid_study_outputs_are_byte_stable() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    assert!(small_grid(d1.path(), "1").status.success());
    assert!(small_grid(d2.path(), "2").status.success());
    for f in ["estimates.csv", "summary.csv"] {
        let a = std::fs::read(d1.path().join(f)).unwrap();
        let b = std::fs::read(d2.path().join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
    let est = std::fs::read_to_string(d1.path().join("estimates.csv")).unwrap();
    assert_eq!(est.lines().count(), 1 + 2 * 3 * 3);
    assert_eq!(
        header(&d1.path().join("summary.csv")),
        "a,method,boundary_mode,count,failures,mean,q1,median,q3,whisker_low,whisker_high,n_outliers,mean_abs_error"
    );
    let manifest = std::fs::read_to_string(d1.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 17"));
    assert!(manifest.contains("config.command = grid-study"));
    assert!(manifest.contains("generator = "));
    let keys: Vec<&str> = manifest.lines().filter(|l| l.starts_with("config.")).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
}

#[test]
fn simulate_sweep_and_ulam_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert!(run(&["simulate", "--family", "linear", "--a", "0.5", "--n", "100", "--output", d]).status.success());
    assert_eq!(header(&dir.path().join("series.csv")), "t,value");
    assert_eq!(std::fs::read_to_string(dir.path().join("series.csv")).unwrap().lines().count(), 101);
    assert!(run(&["sweep", "--a-grid", "-0.5:0.25:0.5", "--n", "2000", "--y0", "3", "--output", d]).status.success());
    assert_eq!(header(&dir.path().join("sweep.csv")), "a,initial_value,final_value,variance,tipped,tip_index");
    assert!(run(&["ulam", "--family", "linear", "--a", "0.5", "--bins", "64", "--output", d]).status.success());
    assert_eq!(header(&dir.path().join("density.csv")), "bin_index,left_edge,midpoint,height");
}

#[test]
fn every_reproduce_config_parses() {
    let dir = repo().join("reproduce");
    let mut count = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("cfg") {
            continue;
        }
        let cfg = parse_args(vec!["--config".to_string(), path.display().to_string()])
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(Cmd::ALL.contains(&cfg.command));
        count += 1;
    }
    assert!(count >= 16, "found {count} configs");
}

#[test]
fn flag_overrides_config_file() {
    let cfg = parse_args(vec![
        "--config".to_string(),
        repo().join("reproduce/fig17.cfg").display().to_string(),
        "--b".to_string(),
        "30".to_string(),
    ])
    .unwrap();
    assert_eq!(cfg.b, 30);
    assert_eq!(cfg.n, 1000);
}
