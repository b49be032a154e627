//! Campaign runner: every (task, mode) pair through either the staged
//! pipeline or the single-shot baseline, scored against hidden tests.

mod score;

use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, Usage};
use crate::pipeline::{run_baseline, run_pipeline, PipelineConfig, PipelineRun, Solution, Transcript};
use crate::sandbox::{ExecutionLimits, Executor, SandboxError};
use crate::task::{load_tasks, Task, TaskError, TaskMode};

pub use score::{compare, mean_rate, rate, score, DeltaRow, DeltaTable, Percent, ScoreError, ScoreReport, Split};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Corpus(#[from] TaskError),
    #[error("invalid campaign config: {0}")]
    Config(String),
    #[error("storage error: {0}")]
    Storage(#[from] std::io::Error),
    #[error(transparent)]
    Score(#[from] ScoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub corpus: PathBuf,
    pub pipeline: PipelineConfig,
    pub modes: Vec<TaskMode>,
    pub workers: usize,
    pub label: String,
    pub baseline_mode: bool,
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.modes.is_empty() {
            return Err(HarnessError::Config("at least one mode is required".into()));
        }
        if self.workers == 0 {
            return Err(HarnessError::Config("workers must be at least 1".into()));
        }
        self.pipeline.validate().map_err(HarnessError::Config)
    }
}

/// Outcome of one (task, mode) pair. `solved` is the hidden-test verdict only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: String,
    pub mode: TaskMode,
    pub solved: bool,
    pub pipeline_verified: bool,
    pub iterations_used: u32,
    pub actor_tokens: Usage,
    pub critic_tokens: Usage,
    pub wall_time_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl TaskResult {
    pub fn key(&self) -> (String, TaskMode) {
        (self.task_id.clone(), self.mode)
    }

    /// Copy without wall-clock time, for equality checks.
    pub fn without_timing(&self) -> TaskResult {
        TaskResult { wall_time_ms: 0, ..self.clone() }
    }
}

/// Runs `solution` against the task's hidden test.
pub fn evaluate_solution(
    task: &Task,
    solution: &Solution,
    limits: &ExecutionLimits,
    executor: &dyn Executor,
) -> Result<bool, SandboxError> {
    let report = executor.execute(&solution.code, &task.ground_truth_test, limits)?;
    Ok(report.passed())
}

/// Where campaign output goes. Implementations must tolerate concurrent calls.
pub trait ResultSink: Sync {
    fn persist(&self, result: &TaskResult, transcript: &Transcript) -> std::io::Result<()>;
}

/// Keeps everything in memory.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub results: Mutex<Vec<TaskResult>>,
    pub transcripts: Mutex<Vec<Transcript>>,
}

impl ResultSink for MemorySink {
    fn persist(&self, result: &TaskResult, transcript: &Transcript) -> std::io::Result<()> {
        self.results.lock().unwrap().push(result.clone());
        self.transcripts.lock().unwrap().push(transcript.clone());
        Ok(())
    }
}

/// Runs one (task, mode) pair end to end.
pub fn run_task(
    task: &Task,
    mode: TaskMode,
    config: &CampaignConfig,
    gateway: &Gateway,
    executor: &dyn Executor,
) -> (TaskResult, Transcript) {
    let started = Instant::now();
    let pipeline = PipelineConfig { mode, ..config.pipeline.clone() };
    let PipelineRun { result, transcript, iterations_used, usage } = if config.baseline_mode {
        run_baseline(task, &pipeline, gateway)
    } else {
        run_pipeline(task, &pipeline, gateway, executor)
    };
    let (solved, verified, failure) = match result {
        Ok(solution) => match evaluate_solution(task, &solution, &pipeline.sandbox_limits, executor) {
            Ok(passed) => (passed, solution.verified, None),
            Err(e) => (false, solution.verified, Some(format!("evaluation: {e}"))),
        },
        Err(e) => (false, false, Some(e.to_string())),
    };
    let result = TaskResult {
        task_id: task.task_id.clone(),
        mode,
        solved,
        pipeline_verified: verified,
        iterations_used,
        actor_tokens: usage.actor,
        critic_tokens: usage.critic,
        wall_time_ms: started.elapsed().as_millis() as u64,
        failure,
    };
    (result, transcript)
}

/// Sorts results into corpus order, complete before instruct.
pub fn sort_results(results: &mut [TaskResult], tasks: &[Task]) {
    let order: std::collections::HashMap<&str, usize> =
        tasks.iter().enumerate().map(|(i, t)| (t.task_id.as_str(), i)).collect();
    results.sort_by_key(|r| (order.get(r.task_id.as_str()).copied().unwrap_or(usize::MAX), r.mode));
}

/// Runs every pending (task, mode) pair on `config.workers` threads.
///
/// Pairs listed in `done` are skipped; their results should already be in
/// `previous`. Pairs whose prompt is empty for a mode are not attempted.
pub fn run_tasks(
    config: &CampaignConfig,
    tasks: &[Task],
    previous: Vec<TaskResult>,
    gateway: &Gateway,
    executor: &dyn Executor,
    sink: &dyn ResultSink,
) -> Result<(Vec<TaskResult>, ScoreReport), HarnessError> {
    config.validate()?;
    let done: HashSet<(String, TaskMode)> = previous.iter().map(TaskResult::key).collect();
    let jobs: Vec<(&Task, TaskMode)> = tasks
        .iter()
        .flat_map(|t| config.modes.iter().map(move |m| (t, *m)))
        .filter(|(t, m)| {
            let available = t.has_mode(*m);
            if !available {
                log::info!("{} has no {m} prompt; not attempted", t.task_id);
            }
            available && !done.contains(&(t.task_id.clone(), *m))
        })
        .collect();
    log::info!("{}: {} pending, {} already done", config.label, jobs.len(), done.len());

    let next = AtomicUsize::new(0);
    let collected = Mutex::new(previous);
    let storage_error: Mutex<Option<std::io::Error>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..config.workers.min(jobs.len().max(1)) {
            scope.spawn(|| loop {
                if storage_error.lock().unwrap().is_some() {
                    break;
                }
                let Some(&(task, mode)) = jobs.get(next.fetch_add(1, Ordering::SeqCst)) else {
                    break;
                };
                let (result, transcript) = run_task(task, mode, config, gateway, executor);
                if let Some(f) = &result.failure {
                    log::warn!("{} [{mode}] failed: {f}", task.task_id);
                }
                if let Err(e) = sink.persist(&result, &transcript) {
                    *storage_error.lock().unwrap() = Some(e);
                    break;
                }
                collected.lock().unwrap().push(result);
            });
        }
    });
    if let Some(e) = storage_error.into_inner().unwrap() {
        return Err(e.into());
    }
    let mut results = collected.into_inner().unwrap();
    sort_results(&mut results, tasks);
    let report = score(&config.label, &results)?;
    Ok((results, report))
}

/// Loads the corpus named in `config` and runs it from scratch.
pub fn run_campaign(
    config: &CampaignConfig,
    gateway: &Gateway,
    executor: &dyn Executor,
    sink: &dyn ResultSink,
) -> Result<(Vec<TaskResult>, ScoreReport), HarnessError> {
    let tasks = load_tasks(&config.corpus)?;
    run_tasks(config, &tasks, Vec::new(), gateway, executor, sink)
}
