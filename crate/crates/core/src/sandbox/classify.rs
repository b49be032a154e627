//! Outcome classification and output shaping for sandbox runs.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionStatus {
    Passed,
    TestFailures,
    RuntimeError,
    SyntaxError,
    Timeout,
    ResourceExceeded,
    HarnessError,
}

impl ExecutionStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ExecutionStatus::Passed => "passed",
            ExecutionStatus::TestFailures => "test_failures",
            ExecutionStatus::RuntimeError => "runtime_error",
            ExecutionStatus::SyntaxError => "syntax_error",
            ExecutionStatus::Timeout => "timeout",
            ExecutionStatus::ResourceExceeded => "resource_exceeded",
            ExecutionStatus::HarnessError => "harness_error",
        }
    }
}

impl std::fmt::Display for ExecutionStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub(crate) const TALLY_PREFIX: &str = "CURA-TALLY";
pub(crate) const HARNESS_ERROR_MARKER: &str = "CURA-HARNESS-ERROR";

/// Test counts reported by the runner's summary line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tally {
    pub run: u32,
    pub failed: u32,
}

/// Parses the last `CURA-TALLY run=N failures=F errors=E` line, if any.
pub fn parse_tally(stderr: &str) -> Option<Tally> {
    let line = stderr.lines().rev().find(|l| l.starts_with(TALLY_PREFIX))?;
    let mut run = None;
    let mut failed = 0u32;
    let mut seen_failed = false;
    for field in line[TALLY_PREFIX.len()..].split_whitespace() {
        let (key, value) = field.split_once('=')?;
        let value: u32 = value.parse().ok()?;
        match key {
            "run" => run = Some(value),
            "failures" | "errors" => {
                failed += value;
                seen_failed = true;
            }
            _ => {}
        }
    }
    seen_failed.then_some(Tally { run: run?, failed })
}

fn has_line_prefix(stderr: &str, prefixes: &[&str]) -> bool {
    stderr
        .lines()
        .any(|l| prefixes.iter().any(|p| l.trim_start().starts_with(p)))
}

pub(crate) fn syntax_signature(stderr: &str) -> bool {
    has_line_prefix(stderr, &["SyntaxError:", "IndentationError:", "TabError:"])
}

fn failure_signature(stderr: &str) -> bool {
    parse_tally(stderr).is_some_and(|t| t.failed > 0)
        || has_line_prefix(stderr, &["AssertionError", "FAILED ("])
}

pub(crate) fn memory_signature(stderr: &str) -> bool {
    has_line_prefix(stderr, &["MemoryError"])
}

/// Maps a finished child process to a status.
///
/// Precedence: Timeout, ResourceExceeded, SyntaxError, TestFailures, then
/// Passed for a clean exit and RuntimeError for everything else.
pub fn classify(exit_code: Option<i32>, stderr: &str, timed_out: bool, oom: bool) -> ExecutionStatus {
    if timed_out {
        ExecutionStatus::Timeout
    } else if oom {
        ExecutionStatus::ResourceExceeded
    } else if syntax_signature(stderr) {
        ExecutionStatus::SyntaxError
    } else if failure_signature(stderr) {
        ExecutionStatus::TestFailures
    } else if stderr.contains(HARNESS_ERROR_MARKER) {
        ExecutionStatus::HarnessError
    } else if exit_code == Some(0) {
        ExecutionStatus::Passed
    } else {
        ExecutionStatus::RuntimeError
    }
}

const TRUNCATION_MARKER: &str = "[truncated]\n";

/// Keeps the tail of `stream` so the returned text, marker included, is at
/// most `max_output` bytes. Invalid UTF-8 becomes U+FFFD.
pub fn truncate_output(stream: &[u8], max_output: usize) -> String {
    let text = String::from_utf8_lossy(stream);
    if text.len() <= max_output {
        return text.into_owned();
    }
    let marker = if max_output > TRUNCATION_MARKER.len() { TRUNCATION_MARKER } else { "" };
    let budget = max_output - marker.len();
    // Skip continuation bytes so decoding starts on a character boundary.
    let mut start = stream.len().saturating_sub(budget);
    let mut skipped = 0;
    while start < stream.len() && skipped < 3 && (stream[start] & 0xC0) == 0x80 {
        start += 1;
        skipped += 1;
    }
    let tail = String::from_utf8_lossy(&stream[start..]);
    let mut cut = tail.len().saturating_sub(budget);
    while !tail.is_char_boundary(cut) {
        cut += 1;
    }
    format!("{marker}{}", &tail[cut..])
}
