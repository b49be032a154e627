//! Verbal process supervision.
//!
//! A second model reviews the pipeline state after each stage and answers in
//! prose. The critique is kept verbatim and folded into later actor prompts;
//! a trailing `VERDICT:` line gives a machine-readable accept/revise flag.

use serde::{Deserialize, Serialize};

use crate::gateway::{ChatMessage, Gateway, GatewayError, ModelRequest, RoleTag};
use crate::pipeline::StageKind;

const IDENTITY: &str = "You are an expert AI assistant specializing in programmatic reasoning, problem decomposition, reflective reasoning, and solution verification.";
const CONTEXT: &str = "You are given a task description along with related outputs (such as task understanding, generated test cases, code, or error messages).";
const GOAL: &str = "Provide a critique of the current output and suggest improvements if needed. You need to provide a detailed critique of the current output and suggest improvements to enhance the quality of the output.";

/// Instruction appended after the supervision template so the critic's reply
/// can be parsed.
pub const VERDICT_INSTRUCTION: &str = "Finish your reply with a final line that reads exactly \"VERDICT: ACCEPTABLE\" if the current output needs no changes, or \"VERDICT: NEEDS_REVISION\" otherwise.";

/// Placeholder used for any absent field.
pub const ABSENT: &str = "(none)";
/// Critique recorded when the critic returns nothing.
pub const NO_CRITIQUE: &str = "(no critique)";
/// Characters of error output kept for the critic (tail end).
pub const ERROR_MESSAGE_CHARS: usize = 2000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupervisionContext {
    pub task: String,
    pub task_understanding: Option<String>,
    pub code: Option<String>,
    pub test_code: Option<String>,
    pub error_message: Option<String>,
    pub stage_under_review: StageKind,
}

impl SupervisionContext {
    pub fn new(task: impl Into<String>, stage_under_review: StageKind) -> Self {
        Self {
            task: task.into(),
            task_understanding: None,
            code: None,
            test_code: None,
            error_message: None,
            stage_under_review,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Acceptable,
    NeedsRevision,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerbalSignal {
    pub critique: String,
    pub verdict: Verdict,
    pub stage_under_review: StageKind,
    pub iteration: u32,
}

/// Keeps the last `max_chars` characters of `text`.
pub fn tail_chars(text: &str, max_chars: usize) -> &str {
    match text.char_indices().rev().nth(max_chars.saturating_sub(1)) {
        Some((idx, _)) if max_chars > 0 => &text[idx..],
        _ if max_chars == 0 => "",
        _ => text,
    }
}

fn field(value: &Option<String>) -> &str {
    value.as_deref().unwrap_or(ABSENT)
}

/// Renders the supervision template with the context substituted.
pub fn render_vps_prompt(ctx: &SupervisionContext) -> String {
    let error = ctx
        .error_message
        .as_deref()
        .map(|e| tail_chars(e, ERROR_MESSAGE_CHARS))
        .unwrap_or(ABSENT);
    format!(
        "Identity: {IDENTITY}\n\
         Context: {CONTEXT}\n\
         Goal: {GOAL}\n\
         Task: {}\n\
         Understanding: {}\n\
         Code: {}\n\
         Test Code: {}\n\
         Error Message: {}\n",
        ctx.task,
        field(&ctx.task_understanding),
        field(&ctx.code),
        field(&ctx.test_code),
        error,
    )
}

/// Full text sent to the critic: the template plus the verdict instruction.
pub fn critic_prompt(ctx: &SupervisionContext) -> String {
    format!("{}\n{VERDICT_INSTRUCTION}\n", render_vps_prompt(ctx))
}

/// Splits a critic reply into verdict and critique.
///
/// The last `VERDICT:` line wins and is removed from the critique. A reply
/// without one is treated as asking for revision.
pub fn parse_critique(reply: &str) -> (Verdict, String) {
    let lines: Vec<&str> = reply.lines().collect();
    let marker = lines.iter().enumerate().rev().find_map(|(i, line)| {
        let rest = line.trim().trim_matches('*').trim();
        let value = rest.strip_prefix("VERDICT:").or_else(|| rest.strip_prefix("Verdict:"))?;
        let verdict = match value.trim().trim_matches(|c: char| c == '*' || c == '.').to_ascii_uppercase().as_str() {
            "ACCEPTABLE" => Verdict::Acceptable,
            "NEEDS_REVISION" | "NEEDS REVISION" => Verdict::NeedsRevision,
            _ => return None,
        };
        Some((i, verdict))
    });
    match marker {
        Some((i, verdict)) => {
            let critique = lines
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, l)| *l)
                .collect::<Vec<_>>()
                .join("\n");
            let critique = critique.trim();
            let critique = if critique.is_empty() { NO_CRITIQUE } else { critique };
            (verdict, critique.to_string())
        }
        None if reply.trim().is_empty() => (Verdict::Acceptable, NO_CRITIQUE.to_string()),
        None => (Verdict::NeedsRevision, reply.trim().to_string()),
    }
}

/// Outcome of one critic call, including what is needed for the transcript.
#[derive(Debug, Clone)]
pub struct Supervision {
    pub signal: VerbalSignal,
    pub request: ModelRequest,
    pub response: crate::gateway::ModelResponse,
}

pub fn critic_request(ctx: &SupervisionContext, model: &str, temperature: f64, max_tokens: u32) -> ModelRequest {
    ModelRequest {
        model_name: model.to_string(),
        messages: vec![ChatMessage::user(critic_prompt(ctx))],
        temperature,
        max_tokens,
        role_tag: RoleTag::Critic,
    }
}

/// Asks the critic for a verbal reward on the current state.
pub fn supervise(
    ctx: &SupervisionContext,
    iteration: u32,
    gateway: &Gateway,
    model: &str,
    temperature: f64,
    max_tokens: u32,
) -> Result<Supervision, GatewayError> {
    let request = critic_request(ctx, model, temperature, max_tokens);
    let response = gateway.complete(&request)?;
    let (verdict, critique) = parse_critique(&response.content);
    Ok(Supervision {
        signal: VerbalSignal { critique, verdict, stage_under_review: ctx.stage_under_review, iteration },
        request,
        response,
    })
}

fn feedback_section(signal: &VerbalSignal) -> String {
    format!(
        "\n\n----- {} review -----\nSupervisor feedback (iteration {}):\n{}",
        signal.stage_under_review, signal.iteration, signal.critique
    )
}

/// Appends the signal's critique to `base_prompt` as a delimited section.
/// Folding a signal that is already present leaves the prompt unchanged.
pub fn fold_signal(signal: &VerbalSignal, base_prompt: &str) -> String {
    let section = feedback_section(signal);
    if base_prompt.contains(&section) {
        return base_prompt.to_string();
    }
    format!("{base_prompt}{section}")
}
