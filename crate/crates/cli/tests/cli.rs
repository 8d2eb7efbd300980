use std::path::Path;
use std::process::{Command, Output};

fn cgf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cgf"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn cgf")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn config_prints_loadable_toml() {
    let dir = tempfile::tempdir().unwrap();
    let out = cgf(&["config", "--synthetic"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("[cgf]"));
    let path = dir.path().join("cfg.toml");
    std::fs::write(&path, &text).unwrap();
    // a config that loads and validates, but the report target is missing
    let out = cgf(&["report", "--config", path.to_str().unwrap(), "--out", dir.path().join("none").to_str().unwrap()]);
    assert_eq!(code(&out), 3);
}

#[test]
fn invalid_settings_exit_with_config_code() {
    assert_eq!(code(&cgf(&["ingest", "--tau", "2"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    // UAH source with no dataset root
    assert_eq!(code(&cgf(&["ingest", "--out", out_dir.to_str().unwrap()])), 2);
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[cgf]\nnot_a_field = 1\n").unwrap();
    assert_eq!(code(&cgf(&["ingest", "--config", bad.to_str().unwrap()])), 2);
}

#[test]
fn missing_dataset_root_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = cgf(&[
        "ingest",
        "--out",
        dir.path().join("run").to_str().unwrap(),
        "--dataset-root",
        dir.path().join("absent").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn selftest_and_gradcheck_pass() {
    let out = cgf(&["selftest", "--seed", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    assert!(!String::from_utf8_lossy(&out.stdout).contains("FAIL"));
    assert_eq!(code(&cgf(&["gradcheck", "--seeds", "2"])), 0);
}

#[test]
fn synthetic_run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let out = cgf(&["run", "--synthetic", "--out", run_dir.to_str().unwrap(), "--seed", "1"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["manifest.json", "metrics.json", "mapping.json", "predictions.csv", "train_cgf.json"] {
        assert!(Path::new(&run_dir).join(name).is_file(), "missing {name}");
    }
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics.is_object());

    // rerunning report on the finished directory succeeds
    assert_eq!(code(&cgf(&["report", run_dir.to_str().unwrap()])), 0);
}
