use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn weakprobe(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_weakprobe"));
    c.args(args);
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn json_report_carries_schema_version_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("ladder_ground_state.toml");
    let out = weakprobe(
        &["ground-state", "--config", path(&cfg), "--out", path(dir.path()), "--format", "json", "--seed", "11"],
        &[],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("ground_state.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["seed"], 11);
    assert_eq!(v["command"], "ground_state");
    assert_eq!(v["tables"]["links"].as_array().unwrap().len(), 7);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let cfg = config("ladder_ground_state.toml");
    let run = |threads: &str| {
        let dir = tempfile::tempdir().unwrap();
        let out = weakprobe(&["probe", "--config", path(&cfg), "--out", path(dir.path()), "--threads", threads], &[]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        ["summary.csv", "sweeps.csv", "extraction.csv"].map(|f| std::fs::read(dir.path().join(f)).unwrap())
    };
    let a = run("2");
    assert_eq!(a, run("2"));
    assert_eq!(a, run("1"));
}

#[test]
fn stdout_report_without_output_directory() {
    let out = weakprobe(&["validate-config", "--config", path(&config("ion_ring.toml"))], &[]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("# summary\nquantity,value\n"), "{text}");
    assert!(text.contains("dimension,3"));
}

#[test]
fn bad_config_fails_with_the_key_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    let text = std::fs::read_to_string(config("ladder_ground_state.toml")).unwrap();
    std::fs::write(&cfg, text.replace("rungs = 3", "rungs = 3\nrung_count = 3")).unwrap();
    let out = weakprobe(&["validate-config", "--config", path(&cfg)], &[]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("rung_count"));
    let out = weakprobe(&["validate-config"], &[]);
    assert!(!out.status.success());
}

#[test]
fn dimension_cap_is_enforced() {
    let cfg = config("ladder_probe.toml");
    let out = weakprobe(&["ground-state", "--config", path(&cfg)], &[("WEAKPROBE_MAX_DIM", "50")]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("WEAKPROBE_MAX_DIM") && err.contains("70"), "{err}");
    let out = weakprobe(&["ground-state", "--config", path(&cfg)], &[("WEAKPROBE_MAX_DIM", "lots")]);
    assert!(!out.status.success());
}
