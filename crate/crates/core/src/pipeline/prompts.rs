//! Actor prompts for each generating stage.

use crate::gateway::ChatMessage;
use crate::vps::{fold_signal, tail_chars, VerbalSignal, ABSENT, ERROR_MESSAGE_CHARS};

pub const UNDERSTANDING_SYSTEM: &str = "You are a careful software engineer. Read the programming task and explain precisely what it asks for: the required function and its signature, inputs, outputs, edge cases, and the libraries involved. Do not write the implementation yet.";

pub const TEST_GENERATION_SYSTEM: &str = "You write Python unit tests for a programming task. Reply with one fenced Python code block containing a unittest.TestCase subclass that exercises normal cases and edge cases. Do not implement the function under test.";

pub const SOLUTION_SYSTEM: &str = "You solve Python programming tasks. Reply with one fenced Python code block containing a complete, self-contained implementation, including all imports.";

fn fold_all(mut prompt: String, history: &[VerbalSignal]) -> String {
    for signal in history {
        prompt = fold_signal(signal, &prompt);
    }
    prompt
}

pub fn understanding(task_prompt: &str, history: &[VerbalSignal]) -> Vec<ChatMessage> {
    let body = format!("Task:\n{task_prompt}");
    vec![
        ChatMessage::system(UNDERSTANDING_SYSTEM),
        ChatMessage::user(fold_all(body, history)),
    ]
}

pub fn test_generation(
    task_prompt: &str,
    entry_point: &str,
    understanding: Option<&str>,
    history: &[VerbalSignal],
) -> Vec<ChatMessage> {
    let body = format!(
        "Task:\n{task_prompt}\n\nUnderstanding:\n{}\n\nThe function under test is `{entry_point}`. Write tests that call it directly; it will already be defined when the tests run.",
        understanding.unwrap_or(ABSENT)
    );
    vec![
        ChatMessage::system(TEST_GENERATION_SYSTEM),
        ChatMessage::user(fold_all(body, history)),
    ]
}

pub fn solution(
    task_prompt: &str,
    understanding: Option<&str>,
    test_code: Option<&str>,
    previous_error: Option<&str>,
    history: &[VerbalSignal],
) -> Vec<ChatMessage> {
    let mut body = format!(
        "Task:\n{task_prompt}\n\nUnderstanding:\n{}\n\nYour code must pass these tests:\n```python\n{}\n```",
        understanding.unwrap_or(ABSENT),
        test_code.unwrap_or(ABSENT),
    );
    if let Some(error) = previous_error {
        body.push_str("\n\nThe previous attempt failed in the sandbox:\n");
        body.push_str(tail_chars(error, ERROR_MESSAGE_CHARS));
    }
    vec![
        ChatMessage::system(SOLUTION_SYSTEM),
        ChatMessage::user(fold_all(body, history)),
    ]
}

/// Single direct request used by the baseline arm.
pub fn baseline(task_prompt: &str) -> Vec<ChatMessage> {
    vec![ChatMessage::system(SOLUTION_SYSTEM), ChatMessage::user(task_prompt)]
}
