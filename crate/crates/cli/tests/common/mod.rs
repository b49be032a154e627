//! Helpers shared by the CLI integration and acceptance tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use cura_core::gateway::{RoleTag, ScriptEntry};
use cura_core::task::{load_tasks, write_tasks, Task, TaskMode};

pub fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/synthetic.jsonl")
}

pub fn synthetic_tasks() -> Vec<Task> {
    load_tasks(fixture()).unwrap()
}

pub fn write_corpus(path: &Path, tasks: &[Task]) {
    let mut f = std::fs::File::create(path).unwrap();
    write_tasks(&mut f, tasks).unwrap();
}

pub const GENERIC_TESTS: &str =
    "```python\nimport unittest\n\nclass GeneratedTests(unittest.TestCase):\n    def test_defined(self):\n        self.assertTrue(callable(task_func))\n```";

/// A script that passes every review and answers each solution request with
/// `solution(task)`. Entries are keyed on the full prompt of each mode, so the
/// script is independent of worker scheduling.
pub fn script_entries(tasks: &[Task], solution: impl Fn(&Task) -> String) -> Vec<ScriptEntry> {
    let mut entries = vec![
        ScriptEntry {
            content: "The task asks for task_func; see the docstring.".into(),
            role: Some(RoleTag::Actor),
            when: Some("Do not write the implementation yet".into()),
            repeat: true,
        },
        ScriptEntry {
            content: GENERIC_TESTS.into(),
            role: Some(RoleTag::Actor),
            when: Some("You write Python unit tests".into()),
            repeat: true,
        },
        ScriptEntry {
            content: "Looks correct.\nVERDICT: ACCEPTABLE".into(),
            role: Some(RoleTag::Critic),
            when: None,
            repeat: true,
        },
    ];
    let mut keyed: Vec<(String, String)> = tasks
        .iter()
        .flat_map(|t| {
            let code = format!("```python\n{}```", solution(t));
            TaskMode::ALL.map(|m| (t.select_prompt(m).unwrap_or_default().to_string(), code.clone()))
        })
        .filter(|(prompt, _)| !prompt.is_empty())
        .collect();
    keyed.sort_by_key(|(p, _)| std::cmp::Reverse(p.len()));
    entries.extend(keyed.into_iter().map(|(prompt, code)| ScriptEntry {
        content: code,
        role: Some(RoleTag::Actor),
        when: Some(prompt),
        repeat: true,
    }));
    entries
}

pub fn write_script(path: &Path, entries: &[ScriptEntry]) {
    let body: String = entries.iter().map(|e| serde_json::to_string(e).unwrap() + "\n").collect();
    std::fs::write(path, body).unwrap();
}

pub fn canonical(t: &Task) -> String {
    t.canonical_solution.clone().expect("fixture has canonical solutions")
}

pub fn stub(t: &Task) -> String {
    let sig = t.complete_prompt.lines().find(|l| l.starts_with("def ")).expect("signature line");
    format!("{sig}\n    raise NotImplementedError\n")
}

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn cura(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_cura")).args(args).output().expect("spawn cura");
    Output {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// Runs a scripted campaign over `corpus` into `out`; panics unless it exits 0.
pub fn scripted_run(corpus: &Path, script: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "run",
        "--corpus",
        corpus.to_str().unwrap(),
        "--backend",
        "scripted",
        "--script",
        script.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--actor-model",
        "scripted-actor",
    ];
    args.extend_from_slice(extra);
    let o = cura(&args);
    assert_eq!(o.code, 0, "run failed\nstdout:\n{}\nstderr:\n{}", o.stdout, o.stderr);
    o
}
