use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{PipelineConfig, StageKind};
use crate::task::TaskMode;

/// Why a supervision event happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupervisionKind {
    /// Review of the stage that just ran.
    Guide,
    /// Follow-up after a failed verification.
    Refine,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEvent {
    pub seq: u64,
    pub iteration: u32,
    pub stage: StageKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supervision: Option<SupervisionKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reviews: Option<StageKind>,
    pub digest: Option<String>,
    pub payload: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub task_id: String,
    pub mode: TaskMode,
    pub baseline: bool,
    pub config: PipelineConfig,
    pub events: Vec<TranscriptEvent>,
}

/// First point where two transcripts disagree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Divergence {
    pub seq: u64,
    pub stage: Option<StageKind>,
    pub detail: String,
}

impl std::fmt::Display for Divergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.stage {
            Some(stage) => write!(f, "event {} ({stage}): {}", self.seq, self.detail),
            None => write!(f, "event {}: {}", self.seq, self.detail),
        }
    }
}

pub(crate) fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or_default()
}

impl Transcript {
    pub fn new(task_id: &str, mode: TaskMode, baseline: bool, config: PipelineConfig) -> Self {
        Self { task_id: task_id.to_string(), mode, baseline, config, events: Vec::new() }
    }

    pub(crate) fn push(&mut self, mut event: TranscriptEvent) {
        event.seq = self.events.len() as u64;
        event.timestamp_ms = now_ms();
        self.events.push(event);
    }

    pub fn stages(&self) -> Vec<StageKind> {
        self.events.iter().map(|e| e.stage).collect()
    }

    pub fn count_supervision(&self, kind: SupervisionKind) -> usize {
        self.events.iter().filter(|e| e.supervision == Some(kind)).count()
    }

    /// Copy with all timestamps zeroed, for equality checks.
    pub fn without_timestamps(&self) -> Transcript {
        let mut copy = self.clone();
        for e in &mut copy.events {
            e.timestamp_ms = 0;
        }
        copy
    }

    /// Compares against `other`, ignoring timestamps.
    pub fn first_divergence(&self, other: &Transcript) -> Option<Divergence> {
        if self.config != other.config || self.baseline != other.baseline {
            return Some(Divergence { seq: 0, stage: None, detail: "configuration differs".into() });
        }
        for (a, b) in self.events.iter().zip(&other.events) {
            let mut a = a.clone();
            let mut b = b.clone();
            a.timestamp_ms = 0;
            b.timestamp_ms = 0;
            if a != b {
                let detail = if a.stage != b.stage {
                    format!("stage {} vs {}", a.stage, b.stage)
                } else if a.error != b.error {
                    format!("error {:?} vs {:?}", a.error, b.error)
                } else if a.digest != b.digest {
                    format!("request digest {:?} vs {:?}", a.digest, b.digest)
                } else {
                    "payload differs".to_string()
                };
                return Some(Divergence { seq: a.seq, stage: Some(a.stage), detail });
            }
        }
        let (n, m) = (self.events.len(), other.events.len());
        (n != m).then(|| {
            let shorter = n.min(m);
            let stage = self.events.get(shorter).or(other.events.get(shorter)).map(|e| e.stage);
            Divergence { seq: shorter as u64, stage, detail: format!("{n} events vs {m}") }
        })
    }
}
