mod common;

use std::path::Path;

use common::*;
use cura_core::archive::{Manifest, RunArchive};
use cura_core::gateway::BackendKind;
use cura_core::harness::{CampaignConfig, TaskResult};
use cura_core::pipeline::PipelineConfig;
use cura_core::sandbox::SandboxConfig;
use cura_core::task::{Task, TaskMode};

fn setup(dir: &Path, tasks: &[Task], solution: impl Fn(&Task) -> String) -> (std::path::PathBuf, std::path::PathBuf) {
    let corpus = dir.join("corpus.jsonl");
    let script = dir.join("script.jsonl");
    write_corpus(&corpus, tasks);
    write_script(&script, &script_entries(tasks, solution));
    (corpus, script)
}

#[test]
fn scripted_golden_run() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = synthetic_tasks();
    let (corpus, script) = setup(dir.path(), &tasks, |t| {
        let n: usize = t.task_id.rsplit('/').next().unwrap().parse().unwrap();
        if n.is_multiple_of(4) { stub(t) } else { canonical(t) }
    });
    let out = dir.path().join("arch");
    let o = scripted_run(&corpus, &script, &out, &[]);
    // 9 of 12 solved in each split.
    assert!(o.stdout.contains("Complete       75.0"), "{}", o.stdout);
    assert!(o.stdout.contains("Instruct       75.0"), "{}", o.stdout);
    assert!(o.stdout.contains("Average        75.0"), "{}", o.stdout);
    for f in ["manifest.json", "corpus.jsonl", "results.jsonl", "cassette.jsonl", "score.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    assert_eq!(std::fs::read_dir(out.join("transcripts")).unwrap().count(), 24);
    let report = cura(&["report", "--archive", out.to_str().unwrap()]);
    assert_eq!(report.code, 0);
    assert_eq!(report.stdout, o.stdout);
}

#[test]
fn missing_corpus_is_a_usage_error() {
    let o = cura(&["run", "--backend", "scripted", "--out", "/tmp/x"]);
    assert_ne!(o.code, 0);
    assert!(o.stderr.contains("--corpus"), "{}", o.stderr);
    let o = cura(&["run", "--corpus", "/nonexistent.jsonl", "--backend", "scripted", "--script", "s", "--out", "/tmp/x"]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("nonexistent.jsonl"), "{}", o.stderr);
}

#[test]
fn scripted_backend_needs_a_script() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.jsonl");
    write_corpus(&corpus, &synthetic_tasks()[..1]);
    let o = cura(&["run", "--corpus", corpus.to_str().unwrap(), "--backend", "scripted", "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("--script"), "{}", o.stderr);
}

#[test]
fn resume_completes_only_missing_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = synthetic_tasks()[..3].to_vec();
    let (corpus, script) = setup(dir.path(), &tasks, canonical);
    let out = dir.path().join("arch");
    let first = scripted_run(&corpus, &script, &out, &[]);
    let results = out.join("results.jsonl");
    let full = std::fs::read_to_string(&results).unwrap();
    let kept: Vec<&str> = full.lines().take(2).collect();
    std::fs::write(&results, format!("{}\n{{\"task_id\": \"Synth", kept.join("\n"))).unwrap();
    let cassette_before = std::fs::read_to_string(out.join("cassette.jsonl")).unwrap().lines().count();

    let second = scripted_run(&corpus, &script, &out, &[]);
    assert_eq!(first.stdout, second.stdout);
    let lines = std::fs::read_to_string(&results).unwrap();
    assert_eq!(lines.lines().count(), 6);
    // Four pairs reran, each with understanding, tests, solution and three reviews.
    let cassette_after = std::fs::read_to_string(out.join("cassette.jsonl")).unwrap().lines().count();
    assert_eq!(cassette_after - cassette_before, 4 * 6);

    // A different configuration must not reuse the archive.
    let o = cura(&[
        "run", "--corpus", corpus.to_str().unwrap(), "--backend", "scripted", "--script", script.to_str().unwrap(),
        "--out", out.to_str().unwrap(), "--recursion-limit", "2",
    ]);
    assert_eq!(o.code, 1);
}

/// Builds an archive whose results hold the given solved/attempted counts.
fn counted_archive(root: &Path, label: &str, splits: &[(TaskMode, u64, u64)]) {
    let manifest = Manifest {
        campaign: CampaignConfig {
            corpus: "corpus.jsonl".into(),
            pipeline: PipelineConfig::new("m", "m"),
            modes: splits.iter().map(|s| s.0).collect(),
            workers: 1,
            label: label.into(),
            baseline_mode: label == "baseline",
        },
        backend: BackendKind::Scripted { script: "none".into() },
        sandbox: SandboxConfig::default(),
        created_at_ms: 0,
    };
    let archive = RunArchive::create(root, &manifest, &[]).unwrap();
    for &(mode, solved, n) in splits {
        for i in 0..n {
            archive
                .append_result(&TaskResult {
                    task_id: format!("T/{i}"),
                    mode,
                    solved: i < solved,
                    pipeline_verified: false,
                    iterations_used: 1,
                    actor_tokens: Default::default(),
                    critic_tokens: Default::default(),
                    wall_time_ms: 0,
                    failure: None,
                })
                .unwrap();
        }
    }
}

#[test]
fn report_csv_and_against() {
    let dir = tempfile::tempdir().unwrap();
    let cura_dir = dir.path().join("cura");
    let base_dir = dir.path().join("baseline");
    counted_archive(&cura_dir, "cura", &[(TaskMode::Complete, 68, 148), (TaskMode::Instruct, 44, 136)]);
    counted_archive(&base_dir, "baseline", &[(TaskMode::Complete, 56, 148), (TaskMode::Instruct, 45, 136)]);

    let csv = cura(&["report", "--archive", cura_dir.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(csv.code, 0, "{}", csv.stderr);
    assert_eq!(
        csv.stdout,
        "campaign_label,split,score_percent\ncura,Complete,45.9\ncura,Instruct,32.4\ncura,Average,39.1\n"
    );

    let delta = cura(&["report", "--archive", cura_dir.to_str().unwrap(), "--against", base_dir.to_str().unwrap()]);
    assert_eq!(delta.code, 0, "{}", delta.stderr);
    let rows: Vec<Vec<&str>> = delta.stdout.lines().skip(1).map(|l| l.split_whitespace().collect()).collect();
    assert_eq!(rows, [
        ["Complete", "45.9", "37.8", "+8.1"],
        ["Instruct", "32.4", "33.1", "-0.7"],
        ["Average", "39.1", "35.5", "+3.6"],
    ]);

    let csv = cura(&["report", "--archive", cura_dir.to_str().unwrap(), "--against", base_dir.to_str().unwrap(), "--format", "csv"]);
    assert!(csv.stdout.ends_with("delta,Complete,+8.1\ndelta,Instruct,-0.7\ndelta,Average,+3.6\n"), "{}", csv.stdout);
}

#[test]
fn report_rejects_mismatched_splits() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    counted_archive(&a, "cura", &[(TaskMode::Instruct, 3, 10)]);
    counted_archive(&b, "baseline", &[(TaskMode::Complete, 3, 10), (TaskMode::Instruct, 3, 10)]);
    let o = cura(&["report", "--archive", a.to_str().unwrap(), "--against", b.to_str().unwrap()]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("different splits"), "{}", o.stderr);
}

#[test]
fn report_on_missing_archive_fails() {
    let o = cura(&["report", "--archive", "/nonexistent/archive"]);
    assert_eq!(o.code, 1);
}

fn cassette_lines(out: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(out.join("cassette.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn write_cassette(out: &Path, lines: &[serde_json::Value]) {
    let body: String = lines.iter().map(|v| v.to_string() + "\n").collect();
    std::fs::write(out.join("cassette.jsonl"), body).unwrap();
}

fn response_contains(entry: &serde_json::Value, needle: &str) -> bool {
    entry["response"]["content"].as_str().is_some_and(|c| c.contains(needle))
}

#[test]
fn replay_detects_edits_and_misses() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = synthetic_tasks()[..4].to_vec();
    let (corpus, script) = setup(dir.path(), &tasks, canonical);
    let out = dir.path().join("arch");
    scripted_run(&corpus, &script, &out, &[]);
    let arch = out.to_str().unwrap();

    let o = cura(&["replay", "--archive", arch]);
    assert_eq!(o.code, 0, "{}\n{}", o.stdout, o.stderr);
    assert!(o.stdout.contains("replay matches"));

    let pristine = cassette_lines(&out);
    // Edit the recorded solution for the reversal task.
    let mut edited = pristine.clone();
    let entry = edited.iter_mut().find(|e| response_contains(e, "s[::-1]")).expect("solution entry");
    let content = entry["response"]["content"].as_str().unwrap().replace("s[::-1]", "s[::+1]");
    entry["response"]["content"] = content.into();
    write_cassette(&out, &edited);
    let o = cura(&["replay", "--archive", arch]);
    assert_eq!(o.code, 3, "{}", o.stdout);
    assert!(o.stdout.contains("Synthetic/1 [complete]") || o.stdout.contains("Synthetic/1 [instruct]"), "{}", o.stdout);
    assert!(o.stdout.contains("solution_reasoning"), "{}", o.stdout);

    // Drop the recorded solution for the sum task.
    let trimmed: Vec<_> = pristine.iter().filter(|e| !response_contains(e, "return a + b")).cloned().collect();
    assert!(trimmed.len() < pristine.len());
    write_cassette(&out, &trimmed);
    let o = cura(&["replay", "--archive", arch]);
    assert_eq!(o.code, 3, "{}", o.stdout);
    assert!(o.stdout.contains("Synthetic/0"), "{}", o.stdout);
    assert!(o.stdout.contains("cassette miss for digest"), "{}", o.stdout);

    write_cassette(&out, &pristine);
    assert_eq!(cura(&["replay", "--archive", arch]).code, 0);
}
