use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ea_agent_core::synthetic::{generate, SyntheticConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ea-agent"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    bundle: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let files = generate(&SyntheticConfig::default()).write_files(&root.join("raw")).unwrap();
    let bundle = root.join("bundle");
    ok(&[
        "ingest",
        "--attr1",
        p(&files.source_attr),
        "--rel1",
        p(&files.source_rel),
        "--attr2",
        p(&files.target_attr),
        "--rel2",
        p(&files.target_rel),
        "--links",
        p(&files.links),
        "--split",
        "0.3",
        "--seed",
        "5",
        "--out",
        p(&bundle),
    ]);
    let cands = root.join("candidates.jsonl");
    ok(&["retrieve", "--bundle", p(&bundle), "--mode", "name-sim", "--k", "10", "--out", p(&cands)]);
    Fixture { _dir: dir, root, bundle }
}

#[test]
fn staged_commands_chain() {
    let f = fixture();
    let (bundle, root) = (p(&f.bundle), &f.root);
    let cands = root.join("candidates.jsonl");
    assert!(std::fs::read_to_string(f.bundle.join("manifest.json")).unwrap().contains("\"train_links\": 15"));

    let first = std::fs::read_to_string(&cands).unwrap().lines().next().unwrap().to_string();
    let entity = first.split('"').nth(3).unwrap().to_string();
    let out = ok(&["stats", "--bundle", bundle, "--entity", &entity]);
    assert!(out.contains("signal_attr   true"), "{out}");

    let plans = root.join("plans.jsonl");
    let out = ok(&["plan", "--bundle", bundle, "--candidates", p(&cands), "--policy", "rule", "--out", p(&plans)]);
    assert!(out.starts_with("35 paths"), "{out}");

    let outcomes = root.join("outcomes.jsonl");
    ok(&[
        "align",
        "--bundle",
        bundle,
        "--candidates",
        p(&cands),
        "--plans",
        p(&plans),
        "--backend",
        "mock",
        "--no-transcript",
        "--out",
        p(&outcomes),
    ]);
    let text = std::fs::read_to_string(&outcomes).unwrap();
    assert_eq!(text.lines().count(), 35);
    assert!(text.contains("\"transcript\":[]"));

    let report = root.join("report.json");
    let links = f.bundle.join("test_links.tsv");
    let out = ok(&[
        "eval",
        "--outcomes",
        p(&outcomes),
        "--candidates",
        p(&cands),
        "--links",
        p(&links),
        "--report",
        p(&report),
    ]);
    assert!(out.contains("Hits@1          1.0000"), "{out}");
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["mrr"], 1.0);

    let t0 = root.join("t0.jsonl");
    let sft = root.join("sft.jsonl");
    let args = |policy: &'static str, round: &'static str, out: &Path, extra: Vec<String>| {
        let mut v: Vec<String> = [
            "train-round",
            "--bundle",
            bundle,
            "--candidates",
            p(&cands),
            "--round",
            round,
            "--policy",
            policy,
            "--backend",
            "mock",
            "--out-trajectories",
            p(out),
            "--out-sft",
            p(&sft),
        ]
        .map(String::from)
        .to_vec();
        v.extend(extra);
        v
    };
    let a0 = args("llm", "0", &t0, vec![]);
    ok(&a0.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(std::fs::read_to_string(&t0).unwrap().lines().count(), 15);
    let t1 = root.join("t1.jsonl");
    let a1 = args("replay", "1", &t1, vec!["--dataset".into(), p(&t0).into()]);
    let out = ok(&a1.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(out.contains("30 SFT records"), "{out}");

    let out = ok(&["report", "--trajectories", p(&t0), p(&t1)]);
    assert_eq!(out.lines().count(), 3, "{out}");
}

#[test]
fn run_writes_all_artifacts() {
    let f = fixture();
    let config = f.root.join("run.toml");
    std::fs::write(&config, "rounds = 2\noutput_dir = \"out\"\n\n[data]\nbundle = \"bundle\"\ncandidates = \"candidates.jsonl\"\n")
        .unwrap();
    let out = ok(&["run", "--config", p(&config)]);
    assert!(out.contains("Hits@1 1.0000"), "{out}");
    for name in ["trajectories_round_0.jsonl", "trajectories_round_1.jsonl", "sft.jsonl", "report.json", "manifest.json", "tokens.json"] {
        assert!(f.root.join("out").join(name).exists(), "{name}");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.toml");
    assert_eq!(run(&["run", "--config", p(&missing)]).status.code(), Some(1));

    let bad = dir.path().join("bad.tsv");
    std::fs::write(&bad, "only-one-field\n").unwrap();
    let out = run(&[
        "ingest", "--attr1", p(&bad), "--rel1", p(&bad), "--attr2", p(&bad), "--rel2", p(&bad), "--links", p(&bad), "--out",
        p(&dir.path().join("b")),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    let f = fixture();
    let cands = f.root.join("candidates.jsonl");
    let config = f.root.join("dead.toml");
    std::fs::write(&config, "[http]\nendpoint = \"http://127.0.0.1:9/v1\"\nmax_attempts = 1\nbackoff_ms = 1\n").unwrap();
    let out = run(&[
        "plan",
        "--bundle",
        p(&f.bundle),
        "--candidates",
        p(&cands),
        "--policy",
        "llm",
        "--backend",
        "http",
        "--config",
        p(&config),
        "--out",
        p(&f.root.join("plans.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
