use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{request_digest, GatewayError, ModelBackend, ModelRequest, ModelResponse, RoleTag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestSummary {
    pub model_name: String,
    pub role_tag: RoleTag,
    pub temperature: f64,
    pub messages: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub digest: String,
    pub request: RequestSummary,
    pub response: ModelResponse,
}

/// Append-only cassette writer. All appends go through one lock.
#[derive(Debug)]
pub struct Cassette {
    path: PathBuf,
    file: Mutex<File>,
}

impl Cassette {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let path = path.into();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { path, file: Mutex::new(file) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn record(&self, request: &ModelRequest, response: &ModelResponse) -> Result<(), GatewayError> {
        let entry = CassetteEntry {
            digest: request_digest(request),
            request: RequestSummary {
                model_name: request.model_name.clone(),
                role_tag: request.role_tag,
                temperature: request.temperature,
                messages: request.messages.len(),
            },
            response: response.clone(),
        };
        let mut line = serde_json::to_vec(&entry).map_err(|e| GatewayError::Decode(e.to_string()))?;
        line.push(b'\n');
        let mut file = self.file.lock().unwrap();
        file.write_all(&line)?;
        file.flush()?;
        Ok(())
    }

    /// Reads every well-formed entry. Lines that fail to parse are skipped
    /// with a warning so a damaged record surfaces as a miss at replay time.
    pub fn read_entries(path: &Path) -> Result<Vec<CassetteEntry>, GatewayError> {
        let reader = BufReader::new(File::open(path)?);
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line) {
                Ok(entry) => entries.push(entry),
                Err(e) => log::warn!("{}:{}: skipping malformed cassette line: {e}", path.display(), i + 1),
            }
        }
        Ok(entries)
    }
}

/// Serves responses from a cassette keyed by request digest.
#[derive(Debug, Default)]
pub struct ReplayBackend {
    entries: HashMap<String, ModelResponse>,
}

impl ReplayBackend {
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        Ok(Self::from_entries(Cassette::read_entries(path)?))
    }

    /// Later entries overwrite earlier ones with the same digest.
    pub fn from_entries(entries: impl IntoIterator<Item = CassetteEntry>) -> Self {
        let entries = entries.into_iter().map(|e| (e.digest, e.response)).collect();
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl ModelBackend for ReplayBackend {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        let digest = request_digest(request);
        self.entries
            .get(&digest)
            .cloned()
            .ok_or(GatewayError::CassetteMiss(digest))
    }
}

/// Passes calls through to `inner` and records every successful exchange.
pub struct RecordingBackend {
    inner: Arc<dyn ModelBackend>,
    cassette: Arc<Cassette>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn ModelBackend>, cassette: Arc<Cassette>) -> Self {
        Self { inner, cassette }
    }
}

impl ModelBackend for RecordingBackend {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        let response = self.inner.complete(request)?;
        self.cassette.record(request, &response)?;
        Ok(response)
    }
}
