use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{GatewayError, ModelBackend, ModelRequest, ModelResponse, RoleTag};

/// One canned reply.
///
/// Without `role` or `when` an entry matches any request, which gives plain
/// queue semantics. `when` restricts the entry to requests whose message text
/// contains the given substring, so scripts stay deterministic when several
/// workers share one backend. `repeat` entries are never consumed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<RoleTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub when: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub repeat: bool,
}

impl ScriptEntry {
    pub fn reply(content: impl Into<String>) -> Self {
        Self { content: content.into(), role: None, when: None, repeat: false }
    }

    fn matches(&self, request: &ModelRequest, text: &str) -> bool {
        self.role.is_none_or(|r| r == request.role_tag)
            && self.when.as_deref().is_none_or(|needle| text.contains(needle))
    }
}

#[derive(Debug, Default)]
pub struct ScriptedBackend {
    queue: Mutex<VecDeque<ScriptEntry>>,
}

impl ScriptedBackend {
    pub fn new(entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        Self { queue: Mutex::new(entries.into_iter().collect()) }
    }

    /// Plain queue of replies, popped in order.
    pub fn from_replies<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self::new(replies.into_iter().map(ScriptEntry::reply))
    }

    /// Loads a line-delimited script file of [`ScriptEntry`] records.
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let reader = BufReader::new(File::open(path)?);
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry = serde_json::from_str(&line).map_err(|e| {
                GatewayError::Decode(format!("{}:{}: {e}", path.display(), i + 1))
            })?;
            entries.push(entry);
        }
        Ok(Self::new(entries))
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().unwrap().len()
    }
}

impl ModelBackend for ScriptedBackend {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        let text = request.text();
        let mut queue = self.queue.lock().unwrap();
        let idx = queue
            .iter()
            .position(|e| e.matches(request, &text))
            .ok_or(GatewayError::ScriptExhausted)?;
        let content = if queue[idx].repeat {
            queue[idx].content.clone()
        } else {
            queue.remove(idx).expect("index in range").content
        };
        Ok(ModelResponse::text(content))
    }
}
