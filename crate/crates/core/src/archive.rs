//! On-disk campaign archive.
//!
//! ```text
//! <root>/manifest.json      campaign config, backend, sandbox settings
//! <root>/corpus.jsonl       copy of the tasks the campaign ran
//! <root>/results.jsonl      one TaskResult per line, appended as tasks finish
//! <root>/cassette.jsonl     every model exchange
//! <root>/score.json         latest score report
//! <root>/transcripts/       one JSON file per (task, mode)
//! ```
//!
//! A results line is the commit point for a task: a transcript without a
//! result is redone on resume. Transcripts are written to a temp file and
//! renamed into place.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::gateway::BackendKind;
use crate::harness::{CampaignConfig, ResultSink, ScoreReport, TaskResult};
use crate::pipeline::Transcript;
use crate::sandbox::SandboxConfig;
use crate::task::{load_tasks, write_tasks, Task, TaskError, TaskMode};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const RESULTS_FILE: &str = "results.jsonl";
pub const CASSETTE_FILE: &str = "cassette.jsonl";
pub const SCORE_FILE: &str = "score.json";
pub const TRANSCRIPT_DIR: &str = "transcripts";

#[derive(Debug, thiserror::Error)]
pub enum ArchiveError {
    #[error("no archive at {0}")]
    MissingArchive(PathBuf),
    #[error("storage error: {0}")]
    Storage(#[from] std::io::Error),
    #[error("corrupt archive file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error(transparent)]
    Corpus(#[from] TaskError),
    #[error("archive at {0} was created with a different configuration")]
    ConfigMismatch(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub campaign: CampaignConfig,
    pub backend: BackendKind,
    pub sandbox: SandboxConfig,
    pub created_at_ms: u64,
}

impl Manifest {
    /// Equality ignoring creation time, worker count and corpus location.
    pub fn same_campaign(&self, other: &Manifest) -> bool {
        let strip = |m: &Manifest| {
            let mut c = m.campaign.clone();
            c.workers = 1;
            c.corpus = PathBuf::new();
            (c, m.sandbox.argv.clone(), m.sandbox.deny_network)
        };
        strip(self) == strip(other)
    }
}

/// A transcript written to disk but not yet visible in the archive.
pub struct StagedTranscript {
    temp: PathBuf,
    target: PathBuf,
}

impl StagedTranscript {
    pub fn commit(self) -> std::io::Result<()> {
        fs::rename(&self.temp, &self.target)
    }
}

#[derive(Debug)]
pub struct RunArchive {
    root: PathBuf,
    results: Mutex<File>,
    staging: AtomicU64,
}

pub fn transcript_file_name(task_id: &str, mode: TaskMode) -> String {
    let safe: String = task_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    let hash = hex::encode(Sha256::digest(task_id.as_bytes()));
    format!("{safe}-{}.{mode}.json", &hash[..8])
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ArchiveError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| ArchiveError::Corrupt { path: path.to_path_buf(), reason: e.to_string() })
}

fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let temp = path.with_extension("json.tmp");
    let mut file = File::create(&temp)?;
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    file.sync_all()?;
    fs::rename(temp, path)
}

impl RunArchive {
    /// Creates a new archive, or reopens an existing one for resume after
    /// checking it was made with the same campaign settings.
    pub fn create(root: impl Into<PathBuf>, manifest: &Manifest, tasks: &[Task]) -> Result<Self, ArchiveError> {
        let root = root.into();
        let manifest_path = root.join(MANIFEST_FILE);
        if manifest_path.exists() {
            let existing: Manifest = read_json(&manifest_path)?;
            if !existing.same_campaign(manifest) {
                return Err(ArchiveError::ConfigMismatch(root));
            }
            let archived = load_tasks(root.join(CORPUS_FILE))?;
            if archived != tasks {
                return Err(ArchiveError::ConfigMismatch(root));
            }
            drop_torn_tail(&root.join(RESULTS_FILE))?;
            return Self::open(root);
        }
        fs::create_dir_all(root.join(TRANSCRIPT_DIR))?;
        let mut corpus = File::create(root.join(CORPUS_FILE))?;
        write_tasks(&mut corpus, tasks)?;
        corpus.sync_all()?;
        let mut manifest = manifest.clone();
        manifest.campaign.corpus = PathBuf::from(CORPUS_FILE);
        write_json_atomic(&manifest_path, &manifest)?;
        Self::open(root)
    }

    pub fn open(root: impl Into<PathBuf>) -> Result<Self, ArchiveError> {
        let root = root.into();
        if !root.join(MANIFEST_FILE).is_file() {
            return Err(ArchiveError::MissingArchive(root));
        }
        fs::create_dir_all(root.join(TRANSCRIPT_DIR))?;
        let results = OpenOptions::new().create(true).append(true).open(root.join(RESULTS_FILE))?;
        Ok(Self { root, results: Mutex::new(results), staging: AtomicU64::new(0) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn cassette_path(&self) -> PathBuf {
        self.root.join(CASSETTE_FILE)
    }

    pub fn manifest(&self) -> Result<Manifest, ArchiveError> {
        read_json(&self.root.join(MANIFEST_FILE))
    }

    pub fn tasks(&self) -> Result<Vec<Task>, ArchiveError> {
        Ok(load_tasks(self.root.join(CORPUS_FILE))?)
    }

    /// Writes the transcript to a temporary file; nothing is visible until
    /// [`StagedTranscript::commit`].
    pub fn stage_transcript(&self, transcript: &Transcript) -> std::io::Result<StagedTranscript> {
        let dir = self.root.join(TRANSCRIPT_DIR);
        let name = transcript_file_name(&transcript.task_id, transcript.mode);
        let n = self.staging.fetch_add(1, Ordering::SeqCst);
        let temp = dir.join(format!(".{name}.{}-{n}.tmp", std::process::id()));
        let mut file = File::create(&temp)?;
        serde_json::to_writer_pretty(&mut file, transcript)?;
        file.write_all(b"\n")?;
        file.sync_all()?;
        Ok(StagedTranscript { temp, target: dir.join(name) })
    }

    pub fn persist_transcript(&self, transcript: &Transcript) -> std::io::Result<()> {
        self.stage_transcript(transcript)?.commit()
    }

    pub fn load_transcript(&self, task_id: &str, mode: TaskMode) -> Result<Option<Transcript>, ArchiveError> {
        let path = self.root.join(TRANSCRIPT_DIR).join(transcript_file_name(task_id, mode));
        if !path.exists() {
            return Ok(None);
        }
        read_json(&path).map(Some)
    }

    /// All committed transcripts, sorted by file name. Staging leftovers are ignored.
    pub fn load_transcripts(&self) -> Result<Vec<Transcript>, ArchiveError> {
        let mut paths: Vec<PathBuf> = fs::read_dir(self.root.join(TRANSCRIPT_DIR))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .filter(|p| !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')))
            .collect();
        paths.sort();
        paths.iter().map(|p| read_json(p)).collect()
    }

    pub fn append_result(&self, result: &TaskResult) -> std::io::Result<()> {
        let mut line = serde_json::to_vec(result)?;
        line.push(b'\n');
        let mut file = self.results.lock().unwrap();
        file.write_all(&line)?;
        file.sync_data()
    }

    /// Reads the results log. A torn final line from an interrupted write is
    /// dropped; later duplicates of a key replace earlier ones.
    pub fn load_results(&self) -> Result<Vec<TaskResult>, ArchiveError> {
        load_results_file(&self.root.join(RESULTS_FILE))
    }

    pub fn write_score(&self, report: &ScoreReport) -> std::io::Result<()> {
        write_json_atomic(&self.root.join(SCORE_FILE), report)
    }

    pub fn load_score(&self) -> Result<Option<ScoreReport>, ArchiveError> {
        let path = self.root.join(SCORE_FILE);
        if !path.exists() {
            return Ok(None);
        }
        read_json(&path).map(Some)
    }
}

/// Cuts an unterminated final line so that appends after a resume start on a
/// fresh line.
fn drop_torn_tail(path: &Path) -> std::io::Result<()> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(e),
    };
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if keep < bytes.len() {
        log::warn!("{}: dropping torn final line before resuming", path.display());
        OpenOptions::new().write(true).open(path)?.set_len(keep as u64)?;
    }
    Ok(())
}

pub fn load_results_file(path: &Path) -> Result<Vec<TaskResult>, ArchiveError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let lines: Vec<String> = BufReader::new(File::open(path)?).lines().collect::<Result<_, _>>()?;
    let mut results: Vec<TaskResult> = Vec::new();
    let last = lines.len().saturating_sub(1);
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<TaskResult>(line) {
            Ok(r) => {
                results.retain(|old| old.key() != r.key());
                results.push(r);
            }
            Err(_) if i == last => log::warn!("{}: dropping torn final line", path.display()),
            Err(e) => {
                return Err(ArchiveError::Corrupt { path: path.to_path_buf(), reason: format!("line {}: {e}", i + 1) })
            }
        }
    }
    Ok(results)
}

impl ResultSink for RunArchive {
    fn persist(&self, result: &TaskResult, transcript: &Transcript) -> std::io::Result<()> {
        self.persist_transcript(transcript)?;
        self.append_result(result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_names_are_safe_and_distinct() {
        let a = transcript_file_name("BigCodeBench/13", TaskMode::Complete);
        let b = transcript_file_name("BigCodeBench_13", TaskMode::Complete);
        assert!(a.starts_with("BigCodeBench_13-") && a.ends_with(".complete.json"));
        assert!(!a.contains('/'));
        assert_ne!(a, b);
    }
}
