use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn toner(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_toner"));
    cmd.args(args).env_remove("TONER_BACKEND");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn full_workflow_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let config = fixture("toy.toml");
    let config = config.to_str().unwrap();
    for step in ["ingest", "train-matcher", "calibrate", "build-dataset", "train", "predict", "eval"] {
        let o = toner(&[step, "--config", config, "--out", out], &[]);
        assert_eq!(code(&o), 0, "{step}: {}", stderr(&o));
        assert!(stdout(&o).starts_with(&format!("{step}: ")), "{}", stdout(&o));
    }
    let o = toner(&["sweep", "--config", config, "--out", out, "--split", "dev", "--grid", "-0.5,0,0.5"], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let sweep = fs::read_to_string(dir.path().join("sweep_dev.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 4, "{sweep}");
    let eval = fs::read_to_string(dir.path().join("eval_test.txt")).unwrap();
    assert!(!eval.is_empty());
    assert!(stdout(&toner(&["eval", "--config", config, "--out", out], &[])).contains("F1 1.0000"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&toner(&[], &[])), 2);
    assert_eq!(code(&toner(&["frobnicate", "--config", "x.toml"], &[])), 2);
    assert_eq!(code(&toner(&["ingest"], &[])), 2);
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.toml");
    let o = toner(&["ingest", "--config", missing.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("error"));
}

#[test]
fn unknown_config_key_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "lamda = 0.1\n");
    let o = toner(&["ingest", "--config", config.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("lamda"), "{}", stderr(&o));
}

#[test]
fn missing_corpus_leaves_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!(
        "train = {:?}\ntest = \"nowhere.txt\"\nout_dir = \"out\"\n",
        fixture("toy_train.txt").display().to_string()
    );
    let config = write_config(dir.path(), &body);
    let o = toner(&["ingest", "--config", config.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let out = dir.path().join("out");
    assert!(!out.exists() || fs::read_dir(&out).unwrap().next().is_none());
}

#[test]
fn bad_predictions_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture("toy.toml");
    let config = config.to_str().unwrap();
    let out = dir.path().to_str().unwrap();
    let preds = dir.path().join("preds.jsonl");
    fs::write(&preds, "{\"id\":\"test-999\",\"output\":\"[]\"}\n").unwrap();
    let o = toner(&["eval", "--config", config, "--out", out, "--predictions", preds.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("test-999"));

    fs::write(&preds, "{\"id\":\"test-0\",\"output\":\"[]\"}\n{\"id\":\"test-0\",\"output\":\"[]\"}\n").unwrap();
    let o = toner(&["eval", "--config", config, "--out", out, "--predictions", preds.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn backend_environment_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture("toy.toml");
    let config = config.to_str().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = toner(&["predict", "--config", config, "--out", out], &[("TONER_BACKEND", "no-such-backend")]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("no-such-backend"));

    let echo = toner(&["predict", "--config", config, "--out", out], &[]);
    assert_eq!(code(&echo), 0, "{}", stderr(&echo));
    let echo_preds = fs::read(dir.path().join("predictions_test.jsonl")).unwrap();
    let fallback = toner(&["predict", "--config", config, "--out", out], &[("TONER_BACKEND", "mock-fallback")]);
    assert_eq!(code(&fallback), 0, "{}", stderr(&fallback));
    let fallback_preds = fs::read(dir.path().join("predictions_test.jsonl")).unwrap();
    assert_ne!(echo_preds, fallback_preds);
}
