use std::path::{Path, PathBuf};
use std::process::Command;

use hierel_cli::{FileDigest, RunManifest};

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn hierel(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_hierel"))
        .args(args)
        .env_remove("HIEREL_API_TOKEN")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = hierel(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn build(dir: &Path) -> String {
    let tree = p(dir, "tree.json");
    ok(&[
        "--config",
        &fixture("toy_config.toml"),
        "build-tree",
        "--schema",
        &fixture("toy_schema.json"),
        "--out",
        &tree,
        "--script",
        &fixture("toy_gateway.json"),
    ]);
    tree
}

fn infer(dir: &Path, tree: &str, name: &str, concurrency: &str) -> PathBuf {
    let traces = p(dir, name);
    ok(&[
        "--config",
        &fixture("toy_config.toml"),
        "infer",
        "--dataset",
        &fixture("toy_dataset.jsonl"),
        "--schema",
        &fixture("toy_schema.json"),
        "--tree",
        tree,
        "--traces",
        &traces,
        "--selector",
        "synthetic",
        "--concurrency",
        concurrency,
    ]);
    PathBuf::from(traces)
}

fn manifest_of(primary: &str) -> RunManifest {
    serde_json::from_slice(&std::fs::read(format!("{primary}.manifest.json")).unwrap()).unwrap()
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = p(dir.path(), "bad.toml");
    std::fs::write(&cfg, "sede = 3\n").unwrap();
    let out = hierel(&["--config", &cfg, "simulate", "--instances", "10"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sede"));
}

#[test]
fn build_without_backend_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = hierel(&[
        "build-tree",
        "--schema",
        &fixture("toy_schema.json"),
        "--out",
        &p(dir.path(), "t.json"),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_exits_2() {
    let out = hierel(&["evaluate", "--input", "/nonexistent/traces.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn manifests_match_disk_and_inputs_are_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let inputs = ["toy_config.toml", "toy_schema.json", "toy_gateway.json", "toy_dataset.jsonl"];
    let before: Vec<FileDigest> = inputs.iter().map(|f| FileDigest::of(Path::new(&fixture(f))).unwrap()).collect();
    let tree = build(dir.path());
    let traces = infer(dir.path(), &tree, "traces.jsonl", "2");
    for primary in [tree.clone(), traces.to_string_lossy().into_owned()] {
        let m = manifest_of(&primary);
        assert!(!m.outputs.is_empty());
        for d in m.outputs.iter().chain(&m.inputs) {
            assert_eq!(FileDigest::of(&d.path).unwrap(), *d, "{}", d.path.display());
        }
        assert_eq!(m.seeds["seed"], 7);
    }
    let after: Vec<FileDigest> = inputs.iter().map(|f| FileDigest::of(Path::new(&fixture(f))).unwrap()).collect();
    assert_eq!(before, after);
}

#[test]
fn reruns_are_byte_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let tree = build(dir.path());
    let first = std::fs::read(&tree).unwrap();
    build(dir.path());
    assert_eq!(std::fs::read(&tree).unwrap(), first);
    let a = infer(dir.path(), &tree, "a.jsonl", "1");
    let b = infer(dir.path(), &tree, "b.jsonl", "4");
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "sim.json");
    ok(&["--seed", "9", "simulate", "--instances", "50", "--depth", "4", "--out", &out]);
    assert_eq!(manifest_of(&out).seeds["seed"], 9);
}

#[test]
fn bootstrap_compares_two_runs() {
    let dir = tempfile::tempdir().unwrap();
    let tree = build(dir.path());
    let a = infer(dir.path(), &tree, "a.jsonl", "2");
    let b = infer(dir.path(), &tree, "b.jsonl", "2");
    let out = p(dir.path(), "boot.json");
    ok(&[
        "bootstrap",
        "--a",
        &a.to_string_lossy(),
        "--b",
        &b.to_string_lossy(),
        "--resamples",
        "50",
        "--out",
        &out,
    ]);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert!(v.is_object());
}
