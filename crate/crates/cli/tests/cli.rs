mod common;

use std::fs;
use std::path::Path;

use common::{accepted_with_codes, dwim, ok};
use dwim_core::jsonl::{parse_jsonl, to_jsonl};
use dwim_core::model::{MaskSample, Workflow};

fn pipeline(dir: &Path, jobs: &str) {
    let tasks = dir.join("tasks.jsonl");
    let wfs = dir.join("workflows.discrepancy_aware.jsonl");
    let (tasks, wfs) = (tasks.to_str().unwrap(), wfs.to_str().unwrap());
    ok(dir, &["--seed", "3", "gen-tasks", "--n", "40"]);
    ok(dir, &["--seed", "3", "--jobs", jobs, "collect", "--tasks", tasks, "--mode", "standard"]);
    ok(dir, &["--seed", "3", "--jobs", jobs, "collect", "--tasks", tasks, "--mode", "discrepancy"]);
    ok(dir, &["flag", "--workflows", wfs]);
    for v in ["instruct-masking", "random-masking", "masking-w-rethink", "naive-sft"] {
        ok(dir, &["--seed", "3", "build-dataset", "--workflows", wfs, "--variant", v, "--tasks", tasks]);
    }
    let ds = dir.join("dataset.instruct_masking.jsonl");
    for s in ["uniform", "unigram", "oracle"] {
        ok(dir, &["eval-loss", "--dataset", ds.to_str().unwrap(), "--scorer", s]);
    }
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn pipeline_is_reproducible_and_job_count_invariant() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path(), "1");
    pipeline(b.path(), "4");
    let first = snapshot(a.path());
    assert!(first.len() >= 13, "{:?}", first.iter().map(|f| &f.0).collect::<Vec<_>>());
    assert_eq!(first, snapshot(b.path()));
    // Rerunning into the same directory changes nothing.
    pipeline(a.path(), "1");
    assert_eq!(first, snapshot(a.path()));
}

#[test]
fn zero_tasks_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = dwim(dir.path(), &["gen-tasks", "--n", "0"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--n must be at least 1"));
    assert!(!dir.path().join("tasks.jsonl").exists());
}

#[test]
fn schema_errors_name_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let good = String::from_utf8(to_jsonl(&[accepted_with_codes("t1", 1)])).unwrap();
    let path = dir.path().join("w.jsonl");
    fs::write(&path, format!("{good}{{\"task_id\": \"t2\", \"actions\": 7}}\n")).unwrap();
    let o = dwim(dir.path(), &["flag", "--workflows", path.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains(&format!("{}:2:", path.display())), "{err}");
}

#[test]
fn naive_sft_yields_one_sample_per_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let wfs: Vec<Workflow> = (1..=5).map(|n| accepted_with_codes(&format!("t{n}"), n)).collect();
    let path = dir.path().join("w.jsonl");
    fs::write(&path, to_jsonl(&wfs)).unwrap();
    ok(dir.path(), &["build-dataset", "--workflows", path.to_str().unwrap(), "--variant", "naive-sft"]);
    let text = fs::read_to_string(dir.path().join("dataset.naive_sft.jsonl")).unwrap();
    let samples: Vec<MaskSample> = parse_jsonl(&text, "d").unwrap();
    assert_eq!(samples.len(), 5);
    assert!(samples.iter().zip(&wfs).all(|(s, w)| s.task_id == w.task_id && s.target_index.is_none()));
}

#[test]
fn stats_reports_mean_tool_use() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.jsonl");
    fs::write(&path, to_jsonl(&[accepted_with_codes("a", 1), accepted_with_codes("b", 3)])).unwrap();
    let out = ok(dir.path(), &["stats", path.to_str().unwrap()]);
    assert!(out.contains("avg tool use          2.0000"), "{out}");
}

#[test]
fn rejected_workflows_need_opt_in() {
    let dir = tempfile::tempdir().unwrap();
    let mut rejected = accepted_with_codes("r", 2);
    rejected.accepted = false;
    let path = dir.path().join("w.jsonl");
    fs::write(&path, to_jsonl(&[accepted_with_codes("a", 1), rejected])).unwrap();
    let p = path.to_str().unwrap();
    ok(dir.path(), &["build-dataset", "--workflows", p, "--variant", "naive-sft"]);
    let count = |d: &Path| fs::read_to_string(d.join("dataset.naive_sft.jsonl")).unwrap().lines().count();
    assert_eq!(count(dir.path()), 1);
    ok(dir.path(), &["build-dataset", "--workflows", p, "--variant", "naive-sft", "--include-rejected"]);
    assert_eq!(count(dir.path()), 2);
}

#[test]
fn config_file_drives_noise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 11\n\n[env.noise]\nerror_rate = 0.0\n").unwrap();
    let c = cfg.to_str().unwrap();
    ok(dir.path(), &["--config", c, "gen-tasks", "--n", "30"]);
    let tasks = dir.path().join("tasks.jsonl");
    let out = ok(dir.path(), &["--config", c, "collect", "--tasks", tasks.to_str().unwrap(), "--mode", "single-turn"]);
    assert!(out.contains("data utilization      1.0000"), "{out}");
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "sede = 1\n").unwrap();
    assert!(!dwim(dir.path(), &["--config", bad.to_str().unwrap(), "gen-tasks", "--n", "1"]).status.success());
}
