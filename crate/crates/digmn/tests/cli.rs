use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use digmn::manifest::RunManifest;
use serde_json::Value;

fn digmn(args: &[&str]) -> Output {
    digmn_env(args, None)
}

fn digmn_env(args: &[&str], seed_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_digmn"));
    cmd.args(args).env("RUST_LOG", "warn").env_remove("DIGMN_SEED");
    if let Some(s) = seed_env {
        cmd.env("DIGMN_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn ok(args: &[&str]) {
    let out = digmn(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn p(path: &Path) -> String {
    path.to_string_lossy().into_owned()
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

/// A small corpus, basis and day-task checkpoint shared by several tests.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        ok(&["generate", "--users", "120", "--seed", "3", "-o", &p(&root.join("gen"))]);
        ok(&[
            "mine",
            "--corpus",
            &p(&root.join("gen/corpus.jsonl")),
            "--k",
            "6,7",
            "--max-documents",
            "800",
            "--set",
            "mine.restarts=1",
            "--set",
            "mine.iterations=60",
            "-o",
            &p(&root.join("mine")),
        ]);
        ok(&[
            "train",
            "--corpus",
            &p(&root.join("gen/corpus.jsonl")),
            "--basis",
            &p(&root.join("mine/basis.json")),
            "--task",
            "day",
            "--set",
            "train.max_epochs=2",
            "-o",
            &p(&root.join("train")),
        ]);
        Fixture { _dir: dir, root }
    }

    fn path(&self, rel: &str) -> String {
        p(&self.root.join(rel))
    }
}

#[test]
fn zero_users_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = digmn(&["generate", "--users", "0", "-o", &p(dir.path())]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_users"));
}

#[test]
fn unknown_key_and_bad_seed_env_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = digmn(&["generate", "--set", "generator.users=5", "-o", &p(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("generator.n_users"));
    let out = digmn_env(&["generate", "--users", "5", "-o", &p(dir.path())], Some("minus-one"));
    assert_eq!(code(&out), 2);
    assert_eq!(code(&digmn(&["--threads", "0", "generate", "-o", &p(dir.path())])), 2);
}

#[test]
fn unreadable_corpus_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.jsonl");
    assert_eq!(code(&digmn(&["mine", "--corpus", &p(&missing), "-o", &p(dir.path())])), 3);
    let garbled = dir.path().join("garbled.jsonl");
    std::fs::write(&garbled, "{\"not\": \"a record\"}\n").unwrap();
    let out = digmn(&["mine", "--corpus", &p(&garbled), "-o", &p(dir.path())]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn seed_precedence_flag_over_env_over_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"generator": {"seed": 5, "n_users": 4}}"#).unwrap();
    let run = |name: &str, extra: &[&str], env: Option<&str>| {
        let out_dir = dir.path().join(name);
        let mut args = vec!["generate", "--config", cfg.to_str().unwrap(), "-o", out_dir.to_str().unwrap()];
        args.extend_from_slice(extra);
        let out = digmn_env(&args, env);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        manifest(&out_dir).seed
    };
    assert_eq!(run("a", &[], None), 5);
    assert_eq!(run("b", &[], Some("9")), 9);
    assert_eq!(run("c", &["--seed", "11"], Some("9")), 11);
}

#[test]
fn manifest_replays_generate() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    ok(&["generate", "--users", "6", "--seed", "4", "-o", &p(&first)]);
    let second = dir.path().join("second");
    ok(&["generate", "--config", &p(&first.join("manifest.json")), "-o", &p(&second)]);
    let (a, b) = (manifest(&first), manifest(&second));
    assert_eq!(a.config, b.config);
    assert_eq!(a.outputs["corpus"].sha256, b.outputs["corpus"].sha256);
    assert_eq!(a.outputs["truth"].sha256, b.outputs["truth"].sha256);
}

#[test]
fn pipeline_artifacts_and_errors() {
    let fx = Fixture::new();

    let px: Value = serde_json::from_str(&std::fs::read_to_string(fx.path("mine/perplexity.json")).unwrap()).unwrap();
    assert_eq!(px["entries"].as_array().unwrap().len(), 2);
    let log = std::fs::read_to_string(fx.path("train/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);

    ok(&[
        "evaluate",
        "--checkpoint",
        &fx.path("train/checkpoint.json"),
        "--corpus",
        &fx.path("gen/corpus.jsonl"),
        "--export-embeddings",
        "3",
        "-o",
        &fx.path("eval1"),
    ]);
    ok(&["evaluate", "--config", &fx.path("eval1/manifest.json"), "-o", &fx.path("eval2")]);
    let (a, b) = (manifest(&fx.root.join("eval1")), manifest(&fx.root.join("eval2")));
    assert_eq!(a.outputs["report"].sha256, b.outputs["report"].sha256);
    assert_eq!(a.outputs["embeddings"].sha256, b.outputs["embeddings"].sha256);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(fx.path("eval1/report.json")).unwrap()).unwrap();
    assert_eq!(report["metric"], "macro_f1");
    let csv = std::fs::read_to_string(fx.path("eval1/embeddings_3d.csv")).unwrap();
    assert!(csv.starts_with("x,y,z,label\n"));

    let mismatch = digmn(&[
        "evaluate",
        "--checkpoint",
        &fx.path("train/checkpoint.json"),
        "--corpus",
        &fx.path("gen/corpus.jsonl"),
        "--task",
        "session",
        "-o",
        &fx.path("eval3"),
    ]);
    assert_eq!(code(&mismatch), 5, "{}", String::from_utf8_lossy(&mismatch.stderr));

    ok(&[
        "ablate",
        "--corpus",
        &fx.path("gen/corpus.jsonl"),
        "--basis",
        &fx.path("mine/basis.json"),
        "--task",
        "session",
        "--axis",
        "d",
        "--grid",
        "1,2",
        "--set",
        "train.max_epochs=1",
        "--set",
        "train.repeats=2",
        "-o",
        &fx.path("ablate"),
    ]);
    let csv = std::fs::read_to_string(fx.path("ablate/ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "axis,value,metric,mean,std,per_seed,error");
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("d,1,auroc,"));
    let table: Value = serde_json::from_str(&std::fs::read_to_string(fx.path("ablate/ablation.json")).unwrap()).unwrap();
    assert_eq!(table["rows"][0]["report"]["per_seed"].as_array().unwrap().len(), 2);
}

#[test]
fn repeated_k_collapses_to_one_candidate() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["generate", "--users", "20", "-o", &p(&dir.path().join("gen"))]);
    ok(&[
        "mine",
        "--corpus",
        &p(&dir.path().join("gen/corpus.jsonl")),
        "--k",
        "7",
        "--k",
        "7",
        "--set",
        "mine.restarts=1",
        "--set",
        "mine.iterations=20",
        "-o",
        &p(&dir.path().join("mine")),
    ]);
    let px: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("mine/perplexity.json")).unwrap()).unwrap();
    assert_eq!(px["entries"].as_array().unwrap().len(), 1);
    assert_eq!(px["best_k"], 7);
}
