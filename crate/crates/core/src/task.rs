//! Benchmark task corpus.
//!
//! Tasks are stored one JSON record per line using the BigCodeBench field
//! names. Unknown fields are carried through untouched so a corpus written
//! back out keeps everything it was loaded with.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("task file not found: {0}")]
    MissingFile(PathBuf),
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("duplicate task_id {task_id:?} at line {line}")]
    DuplicateTaskId { line: usize, task_id: String },
    #[error("task {task_id} has no {mode} prompt")]
    ModeUnavailable { task_id: String, mode: TaskMode },
}

/// Prompt variant a task is posed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    Complete,
    Instruct,
}

impl TaskMode {
    pub const ALL: [TaskMode; 2] = [TaskMode::Complete, TaskMode::Instruct];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskMode::Complete => "complete",
            TaskMode::Instruct => "instruct",
        }
    }
}

impl fmt::Display for TaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TaskMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "complete" => Ok(TaskMode::Complete),
            "instruct" => Ok(TaskMode::Instruct),
            other => Err(format!("unknown task mode {other:?}")),
        }
    }
}

/// One benchmark problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub complete_prompt: String,
    pub instruct_prompt: String,
    pub entry_point: String,
    /// Hidden evaluation harness. Never placed in any model prompt.
    pub ground_truth_test: String,
    #[serde(default)]
    pub libs: Vec<String>,
    /// Reference solution, when the corpus ships one. Used for corpus self-checks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canonical_solution: Option<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Task {
    /// Returns the prompt for `mode` exactly as stored.
    pub fn select_prompt(&self, mode: TaskMode) -> Result<&str, TaskError> {
        let prompt = match mode {
            TaskMode::Complete => &self.complete_prompt,
            TaskMode::Instruct => &self.instruct_prompt,
        };
        if prompt.is_empty() {
            return Err(TaskError::ModeUnavailable {
                task_id: self.task_id.clone(),
                mode,
            });
        }
        Ok(prompt)
    }

    pub fn has_mode(&self, mode: TaskMode) -> bool {
        self.select_prompt(mode).is_ok()
    }
}

const REQUIRED_FIELDS: [&str; 5] = [
    "task_id",
    "complete_prompt",
    "instruct_prompt",
    "entry_point",
    "ground_truth_test",
];

fn parse_record(line_no: usize, line: &str) -> Result<Task, TaskError> {
    let malformed = |reason: String| TaskError::MalformedRecord {
        line: line_no,
        reason,
    };
    let mut record: Map<String, Value> = match serde_json::from_str(line) {
        Ok(Value::Object(map)) => map,
        Ok(_) => return Err(malformed("record is not an object".into())),
        Err(e) => return Err(malformed(format!("invalid JSON: {e}"))),
    };
    for field in REQUIRED_FIELDS {
        match record.get(field) {
            None | Some(Value::Null) => return Err(malformed(format!("missing field `{field}`"))),
            Some(Value::String(_)) => {}
            Some(_) => return Err(malformed(format!("field `{field}` must be a string"))),
        }
    }
    // BigCodeBench dumps store libs as a python-list literal string.
    if let Some(Value::String(s)) = record.get("libs") {
        let libs = parse_libs_literal(s);
        record.insert("libs".into(), Value::from(libs));
    }
    let task: Task =
        serde_json::from_value(Value::Object(record)).map_err(|e| malformed(e.to_string()))?;
    if task.task_id.is_empty() {
        return Err(malformed("empty task_id".into()));
    }
    if task.complete_prompt.is_empty() && task.instruct_prompt.is_empty() {
        return Err(malformed("both prompts are empty".into()));
    }
    if task.ground_truth_test.is_empty() {
        return Err(malformed("empty ground_truth_test".into()));
    }
    Ok(task)
}

fn parse_libs_literal(s: &str) -> Vec<String> {
    s.trim()
        .trim_start_matches('[')
        .trim_end_matches(']')
        .split(',')
        .map(|part| part.trim().trim_matches(|c| c == '\'' || c == '"').to_string())
        .filter(|part| !part.is_empty())
        .collect()
}

/// Parses a line-delimited corpus. Blank lines are skipped; line numbers are 1-based.
pub fn parse_tasks<R: BufRead>(reader: R, source: &Path) -> Result<Vec<Task>, TaskError> {
    let mut tasks = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source_err| TaskError::Io {
            path: source.to_path_buf(),
            source: source_err,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let task = parse_record(line_no, &line)?;
        if !seen.insert(task.task_id.clone()) {
            return Err(TaskError::DuplicateTaskId {
                line: line_no,
                task_id: task.task_id,
            });
        }
        tasks.push(task);
    }
    Ok(tasks)
}

pub fn load_tasks(path: impl AsRef<Path>) -> Result<Vec<Task>, TaskError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => TaskError::MissingFile(path.to_path_buf()),
        _ => TaskError::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    parse_tasks(BufReader::new(file), path)
}

pub fn write_tasks<W: Write>(mut writer: W, tasks: &[Task]) -> std::io::Result<()> {
    for task in tasks {
        serde_json::to_writer(&mut writer, task)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn record(id: &str) -> String {
        serde_json::json!({
            "task_id": id,
            "complete_prompt": "def f():",
            "instruct_prompt": "Write f.",
            "entry_point": "f",
            "ground_truth_test": "assert f() == 1",
            "libs": ["math"],
        })
        .to_string()
    }

    fn parse(text: &str) -> Result<Vec<Task>, TaskError> {
        parse_tasks(Cursor::new(text), Path::new("mem"))
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn preserves_order_and_skips_blank_lines() {
        let text = format!("{}\n\n{}\n", record("a"), record("b"));
        let tasks = parse(&text).unwrap();
        let ids: Vec<_> = tasks.iter().map(|t| t.task_id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
    }

    #[test]
    fn missing_ground_truth_reports_line() {
        let mut bad: Map<String, Value> = serde_json::from_str(&record("b")).unwrap();
        bad.remove("ground_truth_test");
        let text = format!("{}\n{}\n", record("a"), Value::Object(bad));
        match parse(&text) {
            Err(TaskError::MalformedRecord { line, reason }) => {
                assert_eq!(line, 2);
                assert!(reason.contains("ground_truth_test"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = format!("{}\n{}\n", record("a"), record("a"));
        assert!(matches!(
            parse(&text),
            Err(TaskError::DuplicateTaskId { line: 2, .. })
        ));
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            load_tasks("/nonexistent/corpus.jsonl"),
            Err(TaskError::MissingFile(_))
        ));
    }

    #[test]
    fn unknown_fields_survive() {
        let mut rec: Map<String, Value> = serde_json::from_str(&record("a")).unwrap();
        rec.insert("doc_struct".into(), Value::from("{}"));
        let tasks = parse(&Value::Object(rec).to_string()).unwrap();
        let mut out = Vec::new();
        write_tasks(&mut out, &tasks).unwrap();
        assert!(String::from_utf8(out).unwrap().contains("doc_struct"));
    }

    #[test]
    fn libs_literal_string_accepted() {
        let mut rec: Map<String, Value> = serde_json::from_str(&record("a")).unwrap();
        rec.insert("libs".into(), Value::from("['pandas', 'numpy']"));
        let tasks = parse(&Value::Object(rec).to_string()).unwrap();
        assert_eq!(tasks[0].libs, ["pandas", "numpy"]);
    }

    #[test]
    fn select_prompt_verbatim() {
        let task = &parse(&record("a")).unwrap()[0];
        assert_eq!(task.select_prompt(TaskMode::Complete).unwrap(), "def f():");
        assert_eq!(task.select_prompt(TaskMode::Complete).unwrap(), "def f():");
    }

    #[test]
    fn empty_mode_unavailable() {
        let mut task = parse(&record("a")).unwrap().remove(0);
        task.instruct_prompt.clear();
        assert!(matches!(
            task.select_prompt(TaskMode::Instruct),
            Err(TaskError::ModeUnavailable { .. })
        ));
    }
}
