//! The staged reasoning loop.
//!
//! Each iteration runs understanding, test generation and solution
//! reasoning, with a critic review after each, then executes the candidate
//! against its generated tests. A failed verification triggers one more
//! critic review and the loop restarts from understanding with every refine
//! critique so far folded into the prompts. The loop stops on the first
//! verified candidate or at the recursion limit.

mod extract;
pub mod prompts;
mod transcript;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{
    request_digest, Gateway, GatewayError, ModelRequest, ModelResponse, RoleTag, Usage,
    ACTOR_MAX_TOKENS, CRITIC_MAX_TOKENS,
};
use crate::sandbox::{ExecutionLimits, ExecutionReport, Executor, SandboxError};
use crate::task::{Task, TaskError, TaskMode};
use crate::vps::{self, SupervisionContext, VerbalSignal, Verdict};

pub use extract::extract_code;
pub use transcript::{Divergence, SupervisionKind, Transcript, TranscriptEvent};

pub const DEFAULT_RECURSION_LIMIT: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Understanding,
    TestGeneration,
    SolutionReasoning,
    CodeExecution,
    Verification,
    Supervision,
}

impl StageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StageKind::Understanding => "understanding",
            StageKind::TestGeneration => "test_generation",
            StageKind::SolutionReasoning => "solution_reasoning",
            StageKind::CodeExecution => "code_execution",
            StageKind::Verification => "verification",
            StageKind::Supervision => "supervision",
        }
    }
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub recursion_limit: u32,
    pub actor_model: String,
    pub critic_model: String,
    pub actor_temperature: f64,
    pub critic_temperature: f64,
    #[serde(default = "default_actor_tokens")]
    pub actor_max_tokens: u32,
    #[serde(default = "default_critic_tokens")]
    pub critic_max_tokens: u32,
    pub sandbox_limits: ExecutionLimits,
    pub mode: TaskMode,
}

fn default_actor_tokens() -> u32 {
    ACTOR_MAX_TOKENS
}

fn default_critic_tokens() -> u32 {
    CRITIC_MAX_TOKENS
}

impl PipelineConfig {
    pub fn new(actor_model: impl Into<String>, critic_model: impl Into<String>) -> Self {
        Self {
            recursion_limit: DEFAULT_RECURSION_LIMIT,
            actor_model: actor_model.into(),
            critic_model: critic_model.into(),
            actor_temperature: 0.0,
            critic_temperature: 0.0,
            actor_max_tokens: ACTOR_MAX_TOKENS,
            critic_max_tokens: CRITIC_MAX_TOKENS,
            sandbox_limits: ExecutionLimits::default(),
            mode: TaskMode::Complete,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.recursion_limit == 0 {
            return Err("recursion limit must be at least 1".into());
        }
        for (name, t) in [("actor", self.actor_temperature), ("critic", self.critic_temperature)] {
            if !(0.0..=2.0).contains(&t) {
                return Err(format!("{name} temperature {t} outside [0, 2]"));
            }
        }
        if self.actor_model.is_empty() || self.critic_model.is_empty() {
            return Err("actor and critic models must be named".into());
        }
        self.sandbox_limits.validate().map_err(|e| e.to_string())
    }
}

/// Working memory of one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineState {
    pub iteration: u32,
    pub understanding: Option<String>,
    pub test_code: Option<String>,
    pub candidate_code: Option<String>,
    pub last_report: Option<ExecutionReport>,
    pub supervision_history: Vec<VerbalSignal>,
    pub verified: bool,
}

impl PipelineState {
    /// Signals visible to the actor now: every refine critique so far plus
    /// the stage reviews from the current iteration.
    pub fn visible_history(&self) -> Vec<VerbalSignal> {
        self.supervision_history
            .iter()
            .filter(|s| s.iteration == self.iteration || s.stage_under_review == StageKind::Verification)
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Solution {
    pub task_id: String,
    pub code: String,
    pub verified: bool,
    pub iterations_used: u32,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("actor failed during {stage}: {source}")]
    ActorFailure {
        stage: StageKind,
        #[source]
        source: GatewayError,
    },
    #[error("critic failed reviewing {stage}: {source}")]
    CriticFailure {
        stage: StageKind,
        #[source]
        source: GatewayError,
    },
    #[error("sandbox failed: {0}")]
    SandboxFailure(#[from] SandboxError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error("no candidate code was produced")]
    NoCandidate,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleUsage {
    pub actor: Usage,
    pub critic: Usage,
}

/// Everything one run produced. The transcript is complete even on error.
#[derive(Debug)]
pub struct PipelineRun {
    pub result: Result<Solution, PipelineError>,
    pub transcript: Transcript,
    pub iterations_used: u32,
    pub usage: RoleUsage,
}

/// In-loop correctness: only a clean pass of the generated tests counts.
pub fn verify(report: &ExecutionReport) -> bool {
    report.passed()
}

const EMPTY_COMPLETION: &str = "EmptyCompletion: the model returned no content";

struct Run<'a> {
    task: &'a Task,
    prompt: &'a str,
    config: &'a PipelineConfig,
    gateway: &'a Gateway,
    state: PipelineState,
    transcript: Transcript,
    usage: RoleUsage,
}

fn event(stage: StageKind, iteration: u32) -> TranscriptEvent {
    TranscriptEvent {
        seq: 0,
        iteration,
        stage,
        supervision: None,
        reviews: None,
        digest: None,
        payload: String::new(),
        error: None,
        timestamp_ms: 0,
    }
}

impl<'a> Run<'a> {
    fn actor_request(&self, messages: Vec<crate::gateway::ChatMessage>) -> ModelRequest {
        ModelRequest {
            model_name: self.config.actor_model.clone(),
            messages,
            temperature: self.config.actor_temperature,
            max_tokens: self.config.actor_max_tokens,
            role_tag: RoleTag::Actor,
        }
    }

    /// Sends an actor request and logs it. Returns `None` for an empty
    /// completion, which the caller hands to the critic as an error.
    fn call_actor(
        &mut self,
        stage: StageKind,
        request: ModelRequest,
    ) -> Result<Option<ModelResponse>, PipelineError> {
        let mut ev = event(stage, self.state.iteration);
        ev.digest = Some(request_digest(&request));
        match self.gateway.complete(&request) {
            Ok(response) => {
                self.usage.actor += response.usage;
                if response.content.trim().is_empty() {
                    ev.error = Some(EMPTY_COMPLETION.into());
                    self.transcript.push(ev);
                    Ok(None)
                } else {
                    ev.payload = response.content.clone();
                    self.transcript.push(ev);
                    Ok(Some(response))
                }
            }
            Err(source) => {
                ev.error = Some(source.to_string());
                self.transcript.push(ev);
                Err(PipelineError::ActorFailure { stage, source })
            }
        }
    }

    fn supervise(&mut self, kind: SupervisionKind, ctx: SupervisionContext) -> Result<(), PipelineError> {
        let iteration = self.state.iteration;
        let request = vps::critic_request(
            &ctx,
            &self.config.critic_model,
            self.config.critic_temperature,
            self.config.critic_max_tokens,
        );
        let mut ev = event(StageKind::Supervision, iteration);
        ev.supervision = Some(kind);
        ev.reviews = Some(ctx.stage_under_review);
        ev.digest = Some(request_digest(&request));
        let response = match self.gateway.complete(&request) {
            Ok(r) => r,
            Err(source) => {
                ev.error = Some(source.to_string());
                self.transcript.push(ev);
                return Err(PipelineError::CriticFailure { stage: ctx.stage_under_review, source });
            }
        };
        self.usage.critic += response.usage;
        let (verdict, critique) = vps::parse_critique(&response.content);
        let verdict_label = match verdict {
            Verdict::Acceptable => "ACCEPTABLE",
            Verdict::NeedsRevision => "NEEDS_REVISION",
        };
        ev.payload = format!("VERDICT: {verdict_label}\n{critique}");
        self.transcript.push(ev);
        self.state.supervision_history.push(VerbalSignal {
            critique,
            verdict,
            stage_under_review: ctx.stage_under_review,
            iteration,
        });
        Ok(())
    }

    fn context(&self, stage: StageKind) -> SupervisionContext {
        SupervisionContext {
            task: self.prompt.to_string(),
            task_understanding: self.state.understanding.clone(),
            code: self.state.candidate_code.clone(),
            test_code: self.state.test_code.clone(),
            error_message: None,
            stage_under_review: stage,
        }
    }

    fn understand(&mut self) -> Result<(), PipelineError> {
        let history = self.state.visible_history();
        let request = self.actor_request(prompts::understanding(self.prompt, &history));
        let response = self.call_actor(StageKind::Understanding, request)?;
        self.state.understanding = response.map(|r| r.content);
        let mut ctx = self.context(StageKind::Understanding);
        if self.state.understanding.is_none() {
            ctx.error_message = Some(EMPTY_COMPLETION.into());
        }
        self.supervise(SupervisionKind::Guide, ctx)
    }

    fn generate_tests(&mut self) -> Result<(), PipelineError> {
        let history = self.state.visible_history();
        let messages = prompts::test_generation(
            self.prompt,
            &self.task.entry_point,
            self.state.understanding.as_deref(),
            &history,
        );
        let request = self.actor_request(messages);
        let response = self.call_actor(StageKind::TestGeneration, request)?;
        self.state.test_code = response.map(|r| extract_code(&r.content)).filter(|c| !c.trim().is_empty());
        let mut ctx = self.context(StageKind::TestGeneration);
        if self.state.test_code.is_none() {
            ctx.error_message = Some(EMPTY_COMPLETION.into());
        }
        self.supervise(SupervisionKind::Guide, ctx)
    }

    fn generate_solution(&mut self) -> Result<(), PipelineError> {
        let history = self.state.visible_history();
        let previous_error = match &self.state.last_report {
            Some(report) if self.state.iteration > 1 => Some(report.error_text()),
            _ => None,
        };
        let messages = prompts::solution(
            self.prompt,
            self.state.understanding.as_deref(),
            self.state.test_code.as_deref(),
            previous_error.as_deref(),
            &history,
        );
        let request = self.actor_request(messages);
        let response = self.call_actor(StageKind::SolutionReasoning, request)?;
        self.state.candidate_code = response.map(|r| extract_code(&r.content)).filter(|c| !c.trim().is_empty());
        let mut ctx = self.context(StageKind::SolutionReasoning);
        if self.state.candidate_code.is_none() {
            ctx.error_message = Some(EMPTY_COMPLETION.into());
        }
        self.supervise(SupervisionKind::Guide, ctx)
    }

    fn execute(&mut self, executor: &dyn Executor) -> Result<ExecutionReport, PipelineError> {
        let mut ev = event(StageKind::CodeExecution, self.state.iteration);
        let code = self.state.candidate_code.as_deref().unwrap_or("");
        let tests = self.state.test_code.as_deref().unwrap_or("");
        match executor.execute(code, tests, &self.config.sandbox_limits) {
            Ok(report) => {
                ev.payload = execution_summary(&report);
                self.transcript.push(ev);
                Ok(report)
            }
            Err(e) => {
                ev.error = Some(e.to_string());
                self.transcript.push(ev);
                Err(e.into())
            }
        }
    }
}

/// Deterministic description of a report for the transcript (no timing).
pub fn execution_summary(report: &ExecutionReport) -> String {
    let counts = match (report.tests_run, report.tests_failed) {
        (Some(run), Some(failed)) => format!("tests_run={run} tests_failed={failed}"),
        _ => "tests_run=? tests_failed=?".to_string(),
    };
    format!(
        "status={} exit_code={} {counts}\n{}",
        report.status,
        report.exit_code.map_or_else(|| "none".to_string(), |c| c.to_string()),
        report.stderr_excerpt
    )
}

/// Runs the full staged loop for one task in `config.mode`.
pub fn run_pipeline(task: &Task, config: &PipelineConfig, gateway: &Gateway, executor: &dyn Executor) -> PipelineRun {
    let mut transcript = Transcript::new(&task.task_id, config.mode, false, config.clone());
    if let Err(e) = config.validate() {
        return PipelineRun { result: Err(PipelineError::Config(e)), transcript, iterations_used: 0, usage: RoleUsage::default() };
    }
    let prompt = match task.select_prompt(config.mode) {
        Ok(p) => p,
        Err(e) => {
            let mut ev = event(StageKind::Understanding, 0);
            ev.error = Some(e.to_string());
            transcript.push(ev);
            return PipelineRun { result: Err(e.into()), transcript, iterations_used: 0, usage: RoleUsage::default() };
        }
    };
    let mut run = Run {
        task,
        prompt,
        config,
        gateway,
        state: PipelineState::default(),
        transcript,
        usage: RoleUsage::default(),
    };
    let outcome = drive(&mut run, executor);
    let iterations_used = run.state.iteration;
    let result = outcome.and_then(|()| {
        let code = run.state.candidate_code.clone().ok_or(PipelineError::NoCandidate)?;
        Ok(Solution { task_id: task.task_id.clone(), code, verified: run.state.verified, iterations_used })
    });
    PipelineRun { result, transcript: run.transcript, iterations_used, usage: run.usage }
}

fn drive(run: &mut Run<'_>, executor: &dyn Executor) -> Result<(), PipelineError> {
    let mut latest_candidate: Option<String> = None;
    while run.state.iteration < run.config.recursion_limit {
        run.state.iteration += 1;
        run.state.test_code = None;
        run.state.candidate_code = None;

        run.understand()?;
        run.generate_tests()?;
        run.generate_solution()?;
        if let Some(code) = &run.state.candidate_code {
            latest_candidate = Some(code.clone());
        }

        let report = run.execute(executor)?;
        let passed = verify(&report);
        let mut ev = event(StageKind::Verification, run.state.iteration);
        ev.payload = if passed { "correct" } else { "incorrect" }.to_string();
        run.transcript.push(ev);
        run.state.last_report = Some(report);

        if passed {
            run.state.verified = true;
            return Ok(());
        }
        let mut ctx = run.context(StageKind::Verification);
        ctx.error_message = run.state.last_report.as_ref().map(ExecutionReport::error_text);
        run.supervise(SupervisionKind::Refine, ctx)?;
    }
    // Best effort: the most recent non-empty candidate.
    if run.state.candidate_code.is_none() {
        run.state.candidate_code = latest_candidate;
    }
    Ok(())
}

/// Baseline arm: one direct completion from the task prompt, no loop.
pub fn run_baseline(task: &Task, config: &PipelineConfig, gateway: &Gateway) -> PipelineRun {
    let mut transcript = Transcript::new(&task.task_id, config.mode, true, config.clone());
    let mut usage = RoleUsage::default();
    let prompt = match task.select_prompt(config.mode) {
        Ok(p) => p,
        Err(e) => return PipelineRun { result: Err(e.into()), transcript, iterations_used: 0, usage },
    };
    let request = ModelRequest {
        model_name: config.actor_model.clone(),
        messages: prompts::baseline(prompt),
        temperature: config.actor_temperature,
        max_tokens: config.actor_max_tokens,
        role_tag: RoleTag::Actor,
    };
    let mut ev = event(StageKind::SolutionReasoning, 1);
    ev.digest = Some(request_digest(&request));
    let result = match gateway.complete(&request) {
        Ok(response) => {
            usage.actor += response.usage;
            ev.payload = response.content.clone();
            let code = extract_code(&response.content);
            if code.trim().is_empty() {
                ev.error = Some(EMPTY_COMPLETION.into());
                Err(PipelineError::NoCandidate)
            } else {
                Ok(Solution { task_id: task.task_id.clone(), code, verified: false, iterations_used: 1 })
            }
        }
        Err(source) => {
            ev.error = Some(source.to_string());
            Err(PipelineError::ActorFailure { stage: StageKind::SolutionReasoning, source })
        }
    };
    transcript.push(ev);
    PipelineRun { result, transcript, iterations_used: 1, usage }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sandbox::ExecutionStatus;

    fn report(status: ExecutionStatus) -> ExecutionReport {
        ExecutionReport {
            status,
            exit_code: Some(if status == ExecutionStatus::Passed { 0 } else { 1 }),
            stderr_excerpt: String::new(),
            stdout_excerpt: String::new(),
            duration_ms: 1,
            tests_run: None,
            tests_failed: None,
        }
    }

    #[test]
    fn verify_only_accepts_passed() {
        assert!(verify(&report(ExecutionStatus::Passed)));
        assert!(!verify(&report(ExecutionStatus::TestFailures)));
        assert!(!verify(&report(ExecutionStatus::Timeout)));
        assert!(!verify(&report(ExecutionStatus::SyntaxError)));
    }

    #[test]
    fn config_validation() {
        let mut c = PipelineConfig::new("a", "c");
        assert!(c.validate().is_ok());
        c.recursion_limit = 0;
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::new("a", "c");
        c.critic_temperature = 2.1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn visible_history_filters_stale_guides() {
        let sig = |iteration, stage| VerbalSignal {
            critique: format!("{stage}@{iteration}"),
            verdict: Verdict::NeedsRevision,
            stage_under_review: stage,
            iteration,
        };
        let state = PipelineState {
            iteration: 2,
            supervision_history: vec![
                sig(1, StageKind::Understanding),
                sig(1, StageKind::Verification),
                sig(2, StageKind::Understanding),
            ],
            ..Default::default()
        };
        let visible: Vec<_> = state.visible_history().into_iter().map(|s| s.critique).collect();
        assert_eq!(visible, ["verification@1", "understanding@2"]);
    }
}
