use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const SMALL: &str = "steps = 6\nlayers = 1\nheads = 2\nn = 128\nd = 16\nseed = 3\nreps = 1\nworkers = 1\n";

fn evoskip(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evoskip"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn setup(config: &str) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), config).unwrap();
    dir
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn checksum(stdout: &str) -> String {
    stdout.split_whitespace().find(|w| w.starts_with("sha256:")).unwrap().to_string()
}

#[test]
fn generate_is_reproducible() {
    let dir = setup(SMALL);
    let first = ok(&evoskip(dir.path(), &["--config", "c.toml", "--out", "a", "generate"]));
    let second = ok(&evoskip(dir.path(), &["--config", "c.toml", "--out", "b", "generate"]));
    assert_eq!(checksum(&first), checksum(&second));
    let other = ok(&evoskip(dir.path(), &["--config", "c.toml", "--seed", "4", "--out", "c", "generate"]));
    assert_ne!(checksum(&first), checksum(&other));
    let a = fs::read(dir.path().join("a/trajectory.latn")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b/trajectory.latn")).unwrap());
}

#[test]
fn single_operand_file_size() {
    let dir = setup("steps = 1\nlayers = 1\nheads = 1\nn = 40\nd = 8\n");
    ok(&evoskip(dir.path(), &["--config", "c.toml", "--out", "o", "generate"]));
    let size = fs::metadata(dir.path().join("o/trajectory.latn")).unwrap().len();
    assert_eq!(size, 28 + 3 * 40 * 8 * 4);
}

#[test]
fn dense_run_matches_oracle() {
    let dir = setup(SMALL);
    ok(&evoskip(dir.path(), &["--config", "c.toml", "--out", "o", "generate"]));
    ok(&evoskip(
        dir.path(),
        &["--config", "c.toml", "--out", "o", "--input", "o/trajectory.latn", "--mode", "dense", "run"],
    ));
    let report = json(dir.path().join("o/report.json"));
    let eta = report["report"]["eta_per_t"].as_array().unwrap();
    assert_eq!(eta.len(), 6);
    assert!(eta.iter().all(|e| e.as_f64().unwrap() <= 1e-4));
    assert_eq!(report["config"]["mode"], "dense");
    assert_eq!(report["config"]["n"], 128);
    assert!(report["input"]["sha256"].as_str().unwrap().len() == 64);
    let csv = fs::read_to_string(dir.path().join("o/run.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "mode,n,d,T,epsilon,sparsity,flops_performed,flops_dense,wall_seconds,eta_final,degenerate_rows"
    );
    assert!(lines.next().unwrap().starts_with("dense,128,16,6,,"));
}

#[test]
fn signed_threshold_is_normalised() {
    let dir = setup(SMALL);
    ok(&evoskip(dir.path(), &["--config", "c.toml", "--out", "o", "--threshold", "-8", "run"]));
    let report = json(dir.path().join("o/report.json"));
    assert_eq!(report["config"]["threshold"], -8.0);
    assert_eq!(report["config"]["epsilon"], 8.0);
    assert_eq!(report["report"]["epsilon"], 8.0);
    let snapshot = json(dir.path().join("o/mask_final.json"));
    assert_eq!(snapshot["ti"], 8);
    assert_eq!(snapshot["slices"].as_array().unwrap().len(), 2);
    assert_eq!(json(dir.path().join("o/mask_evolution.json")).as_array().unwrap().len(), 6);
}

#[test]
fn zero_threshold_fires_on_every_computed_tile() {
    // the running max already includes the tile's own maximum, so the
    // deficit is never positive
    let dir = setup(SMALL);
    ok(&evoskip(dir.path(), &["--config", "c.toml", "--out", "o", "--threshold", "0", "--mode", "qk", "run"]));
    let report = json(dir.path().join("o/report.json"));
    assert_eq!(report["report"]["epsilon"], 0.0);
    assert_eq!(report["report"]["mask_sparsity_per_t"][0], 1.0);
}

#[test]
fn validation_failures_exit_with_2() {
    let dir = setup(SMALL);
    let positive = evoskip(dir.path(), &["--config", "c.toml", "--threshold", "0.5", "run"]);
    assert_eq!(positive.status.code(), Some(2));
    fs::write(dir.path().join("bad.toml"), "n = 64\nunknown_key = 1\n").unwrap();
    assert_eq!(evoskip(dir.path(), &["--config", "bad.toml", "run"]).status.code(), Some(2));
    assert_eq!(evoskip(dir.path(), &["experiment", "nope"]).status.code(), Some(2));
    ok(&evoskip(dir.path(), &["--config", "c.toml", "--out", "o", "generate"]));
    let mismatch = evoskip(dir.path(), &["--input", "o/trajectory.latn", "--out", "o", "run"]);
    assert_eq!(mismatch.status.code(), Some(2));
    fs::write(dir.path().join("s.json"), "[1.0, 2.0]").unwrap();
    let short = evoskip(dir.path(), &["--config", "c.toml", "--out", "o", "--schedule", "s.json", "run"]);
    assert_eq!(short.status.code(), Some(2));
}

#[test]
fn missing_input_is_a_runtime_failure() {
    let dir = setup(SMALL);
    let out = evoskip(dir.path(), &["--config", "c.toml", "--input", "absent.latn", "run"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn calibrate_then_run_meets_bounds() {
    let dir = setup(SMALL);
    ok(&evoskip(dir.path(), &["--config", "c.toml", "--out", "o", "--grid", "2,4,6,8,12", "calibrate"]));
    let schedule = json(dir.path().join("o/schedule.json"));
    assert_eq!(schedule["xi"], 0.075);
    assert_eq!(schedule["tau"], 0.01);
    assert_eq!(schedule["seed"], 3);
    assert_eq!(schedule["grid"].as_array().unwrap().len(), 5);
    let flagged: Vec<u64> = schedule["flagged"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    ok(&evoskip(dir.path(), &["--config", "c.toml", "--out", "o", "--schedule", "o/schedule.json", "run"]));
    let report = json(dir.path().join("o/report.json"));
    let eta = report["report"]["eta_per_t"].as_array().unwrap();
    let bounds = schedule["bounds"].as_array().unwrap();
    for t in 0..6 {
        if !flagged.contains(&(t as u64)) {
            assert!(eta[t].as_f64().unwrap() <= bounds[t].as_f64().unwrap());
        }
    }
}

#[test]
fn trivial_grid_and_flagged_calibration() {
    let dir = setup(SMALL);
    ok(&evoskip(dir.path(), &["--config", "c.toml", "--out", "o", "--grid", "1e9", "calibrate"]));
    assert_eq!(json(dir.path().join("o/schedule.json"))["eps"], serde_json::json!(vec![1e9; 6]));
    let flagged = evoskip(dir.path(), &["--config", "c.toml", "--out", "f", "--grid", "0", "--xi", "1e-9", "--tau", "0", "calibrate"]);
    assert_eq!(flagged.status.code(), Some(4));
    assert!(dir.path().join("f/schedule.json").exists());
}

#[test]
fn experiments_write_records() {
    let dir = setup(SMALL);
    fs::write(dir.path().join("bound.toml"), format!("{SMALL}trials = 1000\n")).unwrap();
    ok(&evoskip(dir.path(), &["--config", "bound.toml", "--out", "o", "experiment", "bound-check"]));
    let bound = json(dir.path().join("o/bound-check.json"));
    assert_eq!(bound["experiment"], "bound-check");
    assert_eq!(bound["metrics"]["violations"], 0);

    fs::write(dir.path().join("still.toml"), format!("{SMALL}rho = 0.0\nstationary = true\n")).unwrap();
    ok(&evoskip(dir.path(), &["--config", "still.toml", "--out", "o", "experiment", "persistence"]));
    let persistence = json(dir.path().join("o/persistence.json"));
    for p in persistence["metrics"]["points"].as_array().unwrap() {
        assert_eq!(p["persisted"], 1.0);
    }

    ok(&evoskip(dir.path(), &["--config", "c.toml", "--out", "o", "--grid", "2,3,4,5,6", "experiment", "tradeoff"]));
    let csv = fs::read_to_string(dir.path().join("o/tradeoff.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 6);
    assert!(lines[0].starts_with("mode,n,d,T,epsilon,"));

    ok(&evoskip(dir.path(), &["--config", "c.toml", "--out", "o", "experiment", "perturbation"]));
    assert_eq!(json(dir.path().join("o/perturbation.json"))["metrics"].as_array().unwrap().len(), 4);

    fs::write(dir.path().join("sweep.toml"), format!("{SMALL}ns = [64, 96]\n")).unwrap();
    ok(&evoskip(dir.path(), &["--config", "sweep.toml", "--out", "o", "--mode", "dense", "experiment", "length-sweep"]));
    let sweep = json(dir.path().join("o/length-sweep.json"));
    for p in sweep["metrics"].as_array().unwrap() {
        assert_eq!(p["final_sparsity"], 0.0);
    }

    let summary = ok(&evoskip(dir.path(), &["--out", "o", "report"]));
    assert!(summary.contains("experiment bound-check: 1000 trials, 0 violations"));
    assert!(summary.contains("experiment tradeoff: 5 rows"));
}

#[test]
fn config_file_and_flags_combine() {
    let dir = setup(SMALL);
    ok(&evoskip(dir.path(), &["--config", "c.toml", "--out", "o", "--ordering", "radial", "--seed", "9", "--mode", "pv", "run"]));
    let cfg = &json(dir.path().join("o/report.json"))["config"];
    assert_eq!(cfg["ordering"], "radial");
    assert_eq!(cfg["seed"], 9);
    assert_eq!(cfg["n"], 128);
    assert_eq!(cfg["mode"], "pv");
    assert_eq!(cfg["workers"], 1);
}
