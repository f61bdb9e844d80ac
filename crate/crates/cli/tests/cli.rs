use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const CORPUS: &str = "\
(- (sqrt (+ x 1)) (sqrt x))
(- (exp x) 1)
(log (+ 1 x))
(- (+ x 1) x)
(if (< x 0) (- x) x)
(- (+ x y) x)
(if (> x y) (- x y) (- y x))
(- (* x x) (* y y))
(+ (* x y) z)
";

const CONFIG: &str = r#"
seed = 3

[eval]
sample_count = 32

[dataset]
quotas = [
  { vars = 1, conditional = false, count = 2 },
  { vars = 2, conditional = false, count = 2 },
  { vars = 2, conditional = true, count = 1 },
]

[harness]
modes = ["zero-shot", "few-shot"]
baseline = "baseline"

[detector]
kernels = ["cancellation", "recursive_sum"]
warmup = 50
max_trials = 40

[[backends]]
name = "mock"
kind = "mock"
mock = { kind = "rules" }

[[backends]]
name = "baseline"
kind = "baseline-import"
baseline_file = "baseline.jsonl"
"#;

fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("corpus.fpcore"), CORPUS).unwrap();
    std::fs::write(dir.path().join("baseline.jsonl"), "").unwrap();
    let cfg = dir.path().join("fpstab.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    (dir, cfg)
}

fn fpstab(cfg: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fpstab"))
        .arg("--config")
        .arg(cfg)
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn pipeline_runs_end_to_end() {
    let (dir, cfg) = setup();
    for stage in ["compose", "measure", "rewrite", "report"] {
        ok(&fpstab(&cfg, &[stage]));
    }
    let out = dir.path().join("out");
    let dataset = std::fs::read_to_string(out.join("dataset.jsonl")).unwrap();
    assert!(dataset.lines().count() >= 3);
    let csv = std::fs::read_to_string(out.join("report/report.csv")).unwrap();
    assert!(csv.starts_with("backend,mode,group,value,n,"));
    assert!(csv.contains("mock,zero-shot,all,all,"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report/report.json")).unwrap()).unwrap();
    assert_eq!(json["baseline"], "baseline");
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let (dir, cfg) = setup();
    let mut seen = Vec::new();
    for t in ["1", "4"] {
        let ds = dir.path().join(format!("ds{t}.jsonl"));
        let cands = dir.path().join(format!("c{t}.jsonl"));
        ok(&fpstab(&cfg, &["compose", "--threads", t, "--out", ds.to_str().unwrap()]));
        std::fs::create_dir_all(dir.path().join("out")).unwrap();
        std::fs::copy(&ds, dir.path().join("out/dataset.jsonl")).unwrap();
        ok(&fpstab(&cfg, &["rewrite", "--threads", t, "--out", cands.to_str().unwrap()]));
        seen.push((std::fs::read(&ds).unwrap(), std::fs::read(&cands).unwrap()));
    }
    assert_eq!(seen[0], seen[1]);
}

#[test]
fn seed_override_changes_dataset() {
    let (dir, cfg) = setup();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    ok(&fpstab(&cfg, &["compose", "--out", a.to_str().unwrap()]));
    ok(&fpstab(&cfg, &["compose", "--seed", "99", "--out", b.to_str().unwrap()]));
    assert_ne!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn detect_writes_traces() {
    let (dir, cfg) = setup();
    ok(&fpstab(&cfg, &["detect", "--budget", "20"]));
    let traces = dir.path().join("out/traces");
    let trace = std::fs::read_to_string(traces.join("cancellation.jsonl")).unwrap();
    assert_eq!(trace.lines().count(), 40);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(traces.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.as_array().unwrap().len(), 2);
}

#[test]
fn exit_codes_are_categorized() {
    let (dir, cfg) = setup();
    let missing = fpstab(&dir.path().join("nope.toml"), &["compose"]);
    assert_eq!(missing.status.code(), Some(2));

    assert_eq!(fpstab(&cfg, &["detect", "--kernel", "nope"]).status.code(), Some(2));
    assert_eq!(fpstab(&cfg, &["compose", "--threads", "0"]).status.code(), Some(2));

    // report before rewrite: candidates file is missing
    assert_eq!(fpstab(&cfg, &["report"]).status.code(), Some(3));

    std::fs::write(dir.path().join("corpus.fpcore"), "(+ x\n").unwrap();
    let bad = fpstab(&cfg, &["compose"]);
    assert_eq!(bad.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&bad.stderr).contains(":1:"));

    assert_eq!(fpstab(&cfg, &["frobnicate"]).status.code(), Some(2));
}
