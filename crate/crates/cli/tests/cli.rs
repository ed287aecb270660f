use std::fs;
use std::process::Command;

const CONFIG: &str = r#"
out_dir = "out"
tasks = ["mortality"]
[data]
source = "synth"
n_patients = 300
n_cohorts = 3
[cohort]
n_epochs = 40
[encoder]
epochs = 3
[fusion]
epochs = 2
"#;

fn pipeline(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_pipeline")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

#[test]
fn all_then_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("config.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let cfg = cfg.to_str().unwrap();

    let out = pipeline(&["all", "--config", cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("evaluate  done"), "{stdout}");

    let again = pipeline(&["evaluate", "--config", cfg]);
    assert!(String::from_utf8_lossy(&again.stdout).contains("up to date"));

    let dir = tmp.path().join("out");
    let report = pipeline(&["report", "--dir", dir.to_str().unwrap()]);
    assert!(report.status.success());
    let table = String::from_utf8_lossy(&report.stdout);
    assert!(table.contains("mortality") && table.contains("encoder-only"), "{table}");

    let other = pipeline(&["synth", "--config", cfg, "--seed", "9"]);
    assert!(other.status.success());
    let stale = pipeline(&["cluster", "--config", cfg]);
    assert!(!stale.status.success());
    assert!(String::from_utf8_lossy(&stale.stderr).contains("synth"));
}

#[test]
fn missing_upstream_names_the_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("config.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let out = pipeline(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("run stage `embed` first"), "{err}");
}
