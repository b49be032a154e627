//! Isolated execution of candidate code against a test harness.
//!
//! Each run gets a fresh temporary directory and a child process in its own
//! process group. The wall-clock limit is enforced by killing the whole
//! group, memory by `RLIMIT_AS`, and captured output is cut to the tail.
//! Network access is left open unless `deny_network` is set, in which case
//! the child runs in a fresh network namespace via `unshare`.

mod classify;

use std::io::Read;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::{Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use classify::{classify, parse_tally, truncate_output, ExecutionStatus, Tally};

const RUNNER_SOURCE: &str = include_str!("runner.py");
const RUNNER_FILE: &str = "cura_runner.py";
const SOLUTION_FILE: &str = "solution.py";
const TEST_FILE: &str = "test_solution.py";

/// Bytes of each stream kept for classification, independent of the excerpt size.
const ANALYSIS_TAIL: usize = 256 * 1024;

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("sandbox infrastructure failure: {0}")]
    Harness(String),
    #[error("invalid limits: {0}")]
    InvalidLimits(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkdirPolicy {
    #[default]
    FreshTempDir,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionLimits {
    pub wall_clock_ms: u64,
    pub memory_bytes: u64,
    pub max_output_bytes: usize,
    #[serde(default)]
    pub workdir_policy: WorkdirPolicy,
}

impl Default for ExecutionLimits {
    fn default() -> Self {
        Self {
            wall_clock_ms: 30_000,
            memory_bytes: 1 << 30,
            max_output_bytes: 64 * 1024,
            workdir_policy: WorkdirPolicy::FreshTempDir,
        }
    }
}

impl ExecutionLimits {
    pub fn validate(&self) -> Result<(), SandboxError> {
        if self.wall_clock_ms == 0 || self.memory_bytes == 0 || self.max_output_bytes == 0 {
            return Err(SandboxError::InvalidLimits(
                "wall clock, memory and output limits must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn wall_clock(&self) -> Duration {
        Duration::from_millis(self.wall_clock_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub status: ExecutionStatus,
    pub exit_code: Option<i32>,
    pub stderr_excerpt: String,
    pub stdout_excerpt: String,
    pub duration_ms: u64,
    pub tests_run: Option<u32>,
    pub tests_failed: Option<u32>,
}

impl ExecutionReport {
    pub fn passed(&self) -> bool {
        self.status == ExecutionStatus::Passed
    }

    /// Text handed to the critic as the error message: stderr, or stdout
    /// when stderr is empty, or just the status.
    pub fn error_text(&self) -> String {
        let body = if !self.stderr_excerpt.trim().is_empty() {
            self.stderr_excerpt.as_str()
        } else {
            self.stdout_excerpt.as_str()
        };
        if body.trim().is_empty() {
            format!("status: {}", self.status)
        } else {
            format!("status: {}\n{}", self.status, body)
        }
    }
}

/// Anything that can run code against tests and report the outcome.
pub trait Executor: Send + Sync {
    fn execute(&self, code: &str, test_code: &str, limits: &ExecutionLimits)
        -> Result<ExecutionReport, SandboxError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SandboxConfig {
    /// Child argv. `{workdir}`, `{runner}`, `{solution_file}` and `{test_file}`
    /// are substituted; the child's working directory is the run directory.
    pub argv: Vec<String>,
    pub deny_network: bool,
    pub max_concurrent: usize,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self {
            argv: ["python3", "{runner}", "{solution_file}", "{test_file}"]
                .map(String::from)
                .to_vec(),
            deny_network: false,
            max_concurrent: 8,
        }
    }
}

struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

pub struct Sandbox {
    config: SandboxConfig,
    permits: Permits,
}

impl Default for Sandbox {
    fn default() -> Self {
        Self::new(SandboxConfig::default())
    }
}

impl Sandbox {
    pub fn new(config: SandboxConfig) -> Self {
        let permits = Permits {
            free: Mutex::new(config.max_concurrent.max(1)),
            cv: Condvar::new(),
        };
        Self { config, permits }
    }

    pub fn config(&self) -> &SandboxConfig {
        &self.config
    }

    fn command(&self, workdir: &Path, limits: &ExecutionLimits) -> Result<Command, SandboxError> {
        let workdir_str = workdir.to_string_lossy();
        let mut argv: Vec<String> = self
            .config
            .argv
            .iter()
            .map(|arg| {
                arg.replace("{workdir}", &workdir_str)
                    .replace("{runner}", RUNNER_FILE)
                    .replace("{solution_file}", SOLUTION_FILE)
                    .replace("{test_file}", TEST_FILE)
            })
            .collect();
        if self.config.deny_network {
            let mut wrapped: Vec<String> = ["unshare", "--net", "--map-root-user", "--"]
                .map(String::from)
                .to_vec();
            wrapped.append(&mut argv);
            argv = wrapped;
        }
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| SandboxError::Harness("empty argv template".into()))?;

        let mut cmd = Command::new(program);
        cmd.args(args)
            .current_dir(workdir)
            .env_clear()
            .env("PATH", std::env::var_os("PATH").unwrap_or_else(|| "/usr/bin:/bin".into()))
            .env("HOME", workdir)
            .env("TMPDIR", workdir)
            .env("LANG", "C.UTF-8")
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .env("PYTHONHASHSEED", "0")
            .env("PYTHONIOENCODING", "utf-8")
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .process_group(0);
        let memory = limits.memory_bytes as libc::rlim_t;
        // SAFETY: only async-signal-safe calls between fork and exec.
        unsafe {
            cmd.pre_exec(move || {
                let as_limit = libc::rlimit { rlim_cur: memory, rlim_max: memory };
                if libc::setrlimit(libc::RLIMIT_AS, &as_limit) != 0 {
                    return Err(std::io::Error::last_os_error());
                }
                let no_core = libc::rlimit { rlim_cur: 0, rlim_max: 0 };
                libc::setrlimit(libc::RLIMIT_CORE, &no_core);
                Ok(())
            });
        }
        Ok(cmd)
    }
}

fn kill_group(pgid: u32) {
    // SAFETY: plain syscall; ESRCH when the group is already gone is fine.
    unsafe {
        libc::kill(-(pgid as libc::pid_t), libc::SIGKILL);
    }
}

fn spawn_tail_reader<R: Read + Send + 'static>(mut stream: R) -> JoinHandle<Vec<u8>> {
    std::thread::spawn(move || {
        let mut kept = Vec::new();
        let mut chunk = [0u8; 8192];
        loop {
            match stream.read(&mut chunk) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    kept.extend_from_slice(&chunk[..n]);
                    if kept.len() > 2 * ANALYSIS_TAIL {
                        kept.drain(..kept.len() - ANALYSIS_TAIL);
                    }
                }
            }
        }
        if kept.len() > ANALYSIS_TAIL {
            kept.drain(..kept.len() - ANALYSIS_TAIL);
        }
        kept
    })
}

fn wait_with_deadline(child: &mut Child, limit: Duration) -> std::io::Result<(std::process::ExitStatus, bool)> {
    let deadline = Instant::now() + limit;
    loop {
        if let Some(status) = child.try_wait()? {
            return Ok((status, false));
        }
        if Instant::now() >= deadline {
            kill_group(child.id());
            return Ok((child.wait()?, true));
        }
        std::thread::sleep(Duration::from_millis(5));
    }
}

fn scrub_paths(bytes: Vec<u8>, workdir: &Path) -> Vec<u8> {
    let mut text = String::from_utf8_lossy(&bytes).into_owned();
    let mut roots = vec![workdir.to_string_lossy().into_owned()];
    if let Ok(real) = workdir.canonicalize() {
        roots.push(real.to_string_lossy().into_owned());
    }
    for root in roots {
        text = text.replace(&format!("{root}/"), "").replace(&root, ".");
    }
    text.into_bytes()
}

impl Executor for Sandbox {
    fn execute(&self, code: &str, test_code: &str, limits: &ExecutionLimits)
        -> Result<ExecutionReport, SandboxError> {
        limits.validate()?;
        let _permit = self.permits.acquire();
        let workdir = tempfile::Builder::new()
            .prefix("cura-sandbox-")
            .tempdir()
            .map_err(|e| SandboxError::Harness(format!("cannot create work directory: {e}")))?;
        let write = |name: &str, body: &str| {
            std::fs::write(workdir.path().join(name), body)
                .map_err(|e| SandboxError::Harness(format!("cannot write {name}: {e}")))
        };
        write(RUNNER_FILE, RUNNER_SOURCE)?;
        write(SOLUTION_FILE, code)?;
        write(TEST_FILE, test_code)?;

        let mut cmd = self.command(workdir.path(), limits)?;
        let started = Instant::now();
        let mut child = cmd
            .spawn()
            .map_err(|e| SandboxError::Harness(format!("cannot launch {:?}: {e}", self.config.argv[0])))?;
        let pgid = child.id();
        let stdout = spawn_tail_reader(child.stdout.take().expect("piped stdout"));
        let stderr = spawn_tail_reader(child.stderr.take().expect("piped stderr"));

        let waited = wait_with_deadline(&mut child, limits.wall_clock());
        // Reap anything the harness left behind before reading the pipes to EOF.
        kill_group(pgid);
        let (status, timed_out) = waited.map_err(|e| SandboxError::Harness(e.to_string()))?;
        let duration_ms = started.elapsed().as_millis() as u64;
        let stdout = scrub_paths(stdout.join().unwrap_or_default(), workdir.path());
        let stderr = scrub_paths(stderr.join().unwrap_or_default(), workdir.path());
        let stderr_text = String::from_utf8_lossy(&stderr);

        let killed_externally = !timed_out && status.signal() == Some(libc::SIGKILL);
        let oom = killed_externally || classify::memory_signature(&stderr_text);
        let exit_code = status.code();
        let status_kind = classify(exit_code, &stderr_text, timed_out, oom);
        let tally = parse_tally(&stderr_text);
        drop(workdir);

        Ok(ExecutionReport {
            status: status_kind,
            exit_code,
            stderr_excerpt: truncate_output(&stderr, limits.max_output_bytes),
            stdout_excerpt: truncate_output(&stdout, limits.max_output_bytes),
            duration_ms,
            tests_run: tally.map(|t| t.run),
            tests_failed: tally.map(|t| t.failed),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn limits_validation() {
        assert!(ExecutionLimits::default().validate().is_ok());
        let zero = ExecutionLimits { wall_clock_ms: 0, ..Default::default() };
        assert!(zero.validate().is_err());
    }

    #[test]
    fn default_limits_match_documented_values() {
        let l = ExecutionLimits::default();
        assert_eq!(l.wall_clock_ms, 30_000);
        assert_eq!(l.memory_bytes, 1024 * 1024 * 1024);
        assert_eq!(l.max_output_bytes, 65_536);
    }

    #[test]
    fn scrub_replaces_workdir() {
        let out = scrub_paths(b"File \"/tmp/x/solution.py\" in /tmp/x".to_vec(), Path::new("/tmp/x"));
        assert_eq!(String::from_utf8(out).unwrap(), "File \"solution.py\" in .");
    }

    #[test]
    fn missing_interpreter_is_harness_error() {
        let sandbox = Sandbox::new(SandboxConfig {
            argv: vec!["/nonexistent/python".into(), "{runner}".into()],
            ..Default::default()
        });
        let err = sandbox.execute("", "", &ExecutionLimits::default()).unwrap_err();
        assert!(matches!(err, SandboxError::Harness(_)));
    }

    #[test]
    fn error_text_prefers_stderr() {
        let report = ExecutionReport {
            status: ExecutionStatus::RuntimeError,
            exit_code: Some(1),
            stderr_excerpt: "boom".into(),
            stdout_excerpt: "out".into(),
            duration_ms: 3,
            tests_run: None,
            tests_failed: None,
        };
        assert_eq!(report.error_text(), "status: runtime_error\nboom");
    }
}
