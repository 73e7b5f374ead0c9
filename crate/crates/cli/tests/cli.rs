use std::path::Path;
use std::process::{Command, Output};

fn metafuse(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metafuse"))
        .current_dir(dir)
        .env_remove("METAFUSE_OUTPUT_ROOT")
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn generate_writes_the_requested_cohort() {
    let tmp = tempfile::tempdir().unwrap();
    let out = metafuse(tmp.path(), &["--seed", "3", "generate", "--n", "25", "-o", "c.jsonl"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(tmp.path().join("c.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 25);
}

#[test]
fn output_root_prefixes_relative_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("out");
    let out = metafuse(
        tmp.path(),
        &["--output-root", root.to_str().unwrap(), "generate", "--n", "20", "-o", "c.jsonl"],
    );
    assert!(out.status.success());
    assert!(root.join("c.jsonl").exists());
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("cfg.toml"), "seed = 1\n[cohort.generator]\nn_patients = 32\n").unwrap();
    let out = metafuse(tmp.path(), &["--config", "cfg.toml", "generate", "-o", "a.jsonl"]);
    assert!(out.status.success());
    let a = std::fs::read_to_string(tmp.path().join("a.jsonl")).unwrap();
    assert_eq!(a.lines().count(), 32);
    let out = metafuse(tmp.path(), &["--config", "cfg.toml", "generate", "--n", "21", "-o", "b.jsonl"]);
    assert!(out.status.success());
    let b = std::fs::read_to_string(tmp.path().join("b.jsonl")).unwrap();
    assert_eq!(b.lines().count(), 21);
}

#[test]
fn configuration_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = metafuse(tmp.path(), &["generate", "--fixture", "kidney-like"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    std::fs::write(tmp.path().join("bad.toml"), "seed = \"seven\"\n").unwrap();
    let out = metafuse(tmp.path(), &["--config", "bad.toml", "generate"]);
    assert_eq!(out.status.code(), Some(2));

    let out = metafuse(tmp.path(), &["evaluate", "--run", "missing"]);
    assert_eq!(out.status.code(), Some(2));

    let out = metafuse(tmp.path(), &["train", "--mode", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pipeline_errors_exit_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("broken.jsonl"), "{not json}\n").unwrap();
    let out = metafuse(tmp.path(), &["train", "--cohort-file", "broken.jsonl"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
