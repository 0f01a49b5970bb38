use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn prc(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prc")).args(args).current_dir(cwd).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn err(out: &Output) -> String {
    assert!(!out.status.success());
    String::from_utf8(out.stderr.clone()).unwrap()
}

const CONFIG: &str = r#"
[data]
dataset = "data.jsonl"
annotator = "gold"

[run]
trait = "NEU"
ablation = "only_pos"
epochs = 2
learning_rate_grid = [1e-2]

[run.adapter.tiny]
premise_buckets = 256
hypothesis_buckets = 64
dim = 4
"#;

fn setup(dialogues: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(&prc(&["synth", "--dialogues", dialogues, "--out", "data.jsonl"], dir.path()));
    fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
    dir
}

#[test]
fn annotate_is_idempotent_and_rejects_unknown_annotators() {
    let dir = setup("30");
    let first = ok(&prc(&["annotate", "data.jsonl", "--annotator", "gold", "--cache-dir", "cache"], dir.path()));
    assert!(first.contains("dialogues 30  new annotations 30"), "{first}");
    let second = ok(&prc(&["annotate", "data.jsonl", "--annotator", "gold", "--cache-dir", "cache"], dir.path()));
    assert!(second.contains("new annotations 0  cached 30"), "{second}");
    let entries = fs::read_dir(dir.path().join("cache/gold@1")).unwrap().count();
    assert_eq!(entries, 30);

    let e = err(&prc(&["annotate", "data.jsonl", "--annotator", "bert-erc"], dir.path()));
    assert!(e.contains("unknown annotator `bert-erc`"), "{e}");
    for id in ["lexicon", "gold", "model:<path>"] {
        assert!(e.contains(id), "{e}");
    }
}

#[test]
fn train_records_ablation_and_reports_missing_trait() {
    let dir = setup("40");
    ok(&prc(&["train", "--config", "run.toml", "--out-dir", "run"], dir.path()));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("run/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["ablation"], "only_pos");
    assert_eq!(manifest["trait"], "NEU");
    assert!(manifest["config_hash"].as_str().unwrap().len() == 64);
    assert!(dir.path().join("run/checkpoint.json").is_file());
    assert!(dir.path().join("run/train_log.jsonl").is_file());

    fs::write(dir.path().join("bad.toml"), CONFIG.replace("trait = \"NEU\"\n", "")).unwrap();
    let e = err(&prc(&["train", "--config", "bad.toml", "--out-dir", "run2"], dir.path()));
    assert!(e.contains("trait"), "{e}");

    fs::write(dir.path().join("zero.toml"), CONFIG.replace("epochs = 2", "epochs = 2\nbatch_size = 0")).unwrap();
    let e = err(&prc(&["train", "--config", "zero.toml", "--out-dir", "run3"], dir.path()));
    assert!(e.contains("batch_size"), "{e}");
}

#[test]
fn eval_modes_rows_and_determinism() {
    let dir = setup("60");
    ok(&prc(&["train", "--config", "run.toml", "--all-traits", "--out-dir", "runs"], dir.path()));
    let test = "runs/split/test.jsonl";
    ok(&prc(&["eval", "--runs", "runs", "--test", test, "--out-dir", "a"], dir.path()));
    ok(&prc(&["eval", "--runs", "runs", "--test", test, "--out-dir", "b"], dir.path()));
    let a = fs::read(dir.path().join("a/overall.json")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b/overall.json")).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 1);

    ok(&prc(&["eval", "--runs", "runs", "--test", test, "--mode", "flow", "--out-dir", "a"], dir.path()));
    let flow: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("a/flow.json")).unwrap()).unwrap();
    assert_eq!(flow["rows"].as_array().unwrap().len(), 4);
    let csv = fs::read_to_string(dir.path().join("a/flow.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "method,AGR,CON,EXT,OPN,NEU,Avg");

    fs::remove_dir_all(dir.path().join("runs/OPN")).unwrap();
    let e = err(&prc(&["eval", "--runs", "runs", "--test", test, "--out-dir", "c"], dir.path()));
    assert!(e.contains("missing run for trait OPN"), "{e}");
}

#[test]
fn session_prints_rows_and_rejects_bad_threshold() {
    let dir = setup("40");
    ok(&prc(&["train", "--config", "run.toml", "--all-traits", "--out-dir", "runs"], dir.path()));
    let mut child = Command::new(env!("CARGO_BIN_EXE_prc"))
        .args(["session", "--runs", "runs", "--target", "Ann", "--annotator", "lexicon", "--events", "events.jsonl"])
        .current_dir(dir.path())
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"Bob: hello there\nnot a turn\nAnn: I am so sad today\n")
        .unwrap();
    let out = ok(&child.wait_with_output().unwrap());
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[1], "[1] Bob  -");
    assert!(lines[2].starts_with("error: expected `name: text`"), "{out}");
    assert!(lines[3].starts_with("[2] Ann  AGR "), "{out}");
    assert!(dir.path().join("events.jsonl").is_file());

    let e = err(&prc(&["session", "--runs", "runs", "--target", "Ann", "--threshold", "1.5"], dir.path()));
    assert!(e.contains("threshold"), "{e}");
}

#[test]
fn stats_and_split() {
    let dir = setup("50");
    let stats: serde_json::Value = serde_json::from_str(&ok(&prc(&["stats", "data.jsonl"], dir.path()))).unwrap();
    assert_eq!(stats["dialogues"], 50);
    let out = ok(&prc(&["split", "data.jsonl", "--seed", "3", "--out-dir", "split"], dir.path()));
    assert!(out.contains("train 40  validation 5  test 5"), "{out}");
}
