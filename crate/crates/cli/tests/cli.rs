use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn polymodel(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polymodel"))
        .args(args)
        .current_dir(cwd)
        .env_remove("POLYMODEL_OUT")
        .output()
        .expect("spawn polymodel")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn err(out: &Output) -> String {
    assert!(!out.status.success(), "expected failure, got success");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let out = polymodel(
        &["synth", "--desk", "--funds", "8", "--factors", "4", "--months", "84", "--seed", "3", "--out", "data"],
        dir,
    );
    ok(&out);
    let cfg = dir.join("run.json");
    fs::write(
        &cfg,
        r#"{"data": {"funds": "data/funds.csv", "factors": "data/factors.csv"}, "seed": 3, "n_shuffles": 100}"#,
    )
    .unwrap();
    cfg
}

#[test]
fn synth_round_trips_through_its_spec() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&polymodel(&["synth", "--desk", "--funds", "4", "--factors", "3", "--months", "30", "--seed", "9", "--out", "a"], tmp.path()));
    // regenerating from the written spec reproduces the CSVs byte for byte
    ok(&polymodel(&["synth", "--spec", "a/spec.json", "--out", "b"], tmp.path()));
    for f in ["funds.csv", "factors.csv"] {
        assert_eq!(fs::read(tmp.path().join("a").join(f)).unwrap(), fs::read(tmp.path().join("b").join(f)).unwrap());
    }
    ok(&polymodel(&["synth", "--spec", "a/spec.json", "--seed", "10", "--out", "c"], tmp.path()));
    assert_ne!(
        fs::read(tmp.path().join("a/funds.csv")).unwrap(),
        fs::read(tmp.path().join("c/funds.csv")).unwrap()
    );
}

#[test]
fn invalid_spec_names_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.json"), r#"{"funds": 3, "factors": 2, "months": "many"}"#).unwrap();
    let e = err(&polymodel(&["synth", "--spec", "bad.json", "--out", "x"], tmp.path()));
    assert!(e.contains("months"), "{e}");
}

#[test]
fn missing_data_file_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("run.json"), r#"{"data": {"funds": "nope.csv", "factors": "nope2.csv"}}"#).unwrap();
    let e = err(&polymodel(&["ingest", "--config", "run.json", "--out", "o"], tmp.path()));
    assert!(e.contains("data.funds"), "{e}");
}

#[test]
fn unknown_config_key_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("run.json"), r#"{"n_shufles": 5}"#).unwrap();
    let e = err(&polymodel(&["run", "--config", "run.json"], tmp.path()));
    assert!(e.contains("n_shufles"), "{e}");
}

#[test]
fn run_is_deterministic_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    small_config(tmp.path());
    ok(&polymodel(&["run", "--config", "run.json", "--out", "r1"], tmp.path()));
    ok(&polymodel(&["run", "--config", "run.json", "--out", "r2", "--workers", "1"], tmp.path()));
    let a = fs::read(tmp.path().join("r1/report.json")).unwrap();
    assert_eq!(a, fs::read(tmp.path().join("r2/report.json")).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(report["cells"].as_array().unwrap().len(), 32);

    let tables = ok(&polymodel(&["report", "--out", "r1"], tmp.path()));
    assert!(tables.contains("Using Machine Learning"));
    assert!(tables.contains("Best performer"));

    // a rerun reuses the cached stages
    let again = ok(&polymodel(&["run", "--config", "run.json", "--out", "r1"], tmp.path()));
    assert!(again.contains("cached: ingest, scores, features, predictions"), "{again}");
}

#[test]
fn single_backtest_cell_and_env_output_dir() {
    let tmp = tempfile::tempdir().unwrap();
    small_config(tmp.path());
    let out = Command::new(env!("CARGO_BIN_EXE_polymodel"))
        .args(["backtest", "--config", "run.json", "--filters", "LTS,Sharpe", "--ml", "--weighted"])
        .current_dir(tmp.path())
        .env("POLYMODEL_OUT", "from-env")
        .output()
        .unwrap();
    let stdout = ok(&out);
    let m: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(m["Filters"], "LTS, Sharpe");
    assert_eq!(m["Weighted"], true);
    assert!(tmp.path().join("from-env/backtest/value_path.csv").exists());

    let e = err(&polymodel(&["backtest", "--config", "run.json", "--filters", "Alpha"], tmp.path()));
    assert!(e.contains("Alpha"), "{e}");
}
