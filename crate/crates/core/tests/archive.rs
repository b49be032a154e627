use cura_core::archive::{ArchiveError, Manifest, RunArchive};
use cura_core::gateway::BackendKind;
use cura_core::harness::CampaignConfig;
use cura_core::pipeline::{PipelineConfig, Transcript};
use cura_core::sandbox::SandboxConfig;
use cura_core::task::{Task, TaskMode};

fn manifest(label: &str) -> Manifest {
    Manifest {
        campaign: CampaignConfig {
            corpus: "c.jsonl".into(),
            pipeline: PipelineConfig::new("a", "c"),
            modes: vec![TaskMode::Complete],
            workers: 1,
            label: label.into(),
            baseline_mode: false,
        },
        backend: BackendKind::Replay { cassette: "x".into() },
        sandbox: SandboxConfig::default(),
        created_at_ms: 1,
    }
}

fn tasks() -> Vec<Task> {
    vec![Task {
        task_id: "t/0".into(),
        complete_prompt: "def f():".into(),
        instruct_prompt: String::new(),
        entry_point: "f".into(),
        ground_truth_test: "assert f()".into(),
        libs: vec![],
        canonical_solution: None,
        extra: Default::default(),
    }]
}

fn transcript(id: &str, payload: &str) -> Transcript {
    let mut t = Transcript::new(id, TaskMode::Complete, false, PipelineConfig::new("a", "c"));
    t.events.push(cura_core::pipeline::TranscriptEvent {
        seq: 0,
        iteration: 1,
        stage: cura_core::StageKind::Understanding,
        supervision: None,
        reviews: None,
        digest: Some("d".into()),
        payload: payload.into(),
        error: None,
        timestamp_ms: 42,
    });
    t
}

#[test]
fn transcript_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let archive = RunArchive::create(dir.path(), &manifest("x"), &tasks()).unwrap();
    let t = transcript("t/0", "hello");
    archive.persist_transcript(&t).unwrap();
    assert_eq!(archive.load_transcript("t/0", TaskMode::Complete).unwrap(), Some(t.clone()));
    assert_eq!(archive.load_transcripts().unwrap(), vec![t]);
}

#[test]
fn uncommitted_transcript_is_invisible() {
    let dir = tempfile::tempdir().unwrap();
    let archive = RunArchive::create(dir.path(), &manifest("x"), &tasks()).unwrap();
    archive.persist_transcript(&transcript("kept", "a")).unwrap();
    let staged = archive.stage_transcript(&transcript("crashed", "b")).unwrap();
    // crash: never committed
    drop(staged);
    let reopened = RunArchive::open(dir.path()).unwrap();
    let loaded = reopened.load_transcripts().unwrap();
    assert_eq!(loaded.len(), 1);
    assert_eq!(loaded[0].task_id, "kept");
    assert!(reopened.load_transcript("crashed", TaskMode::Complete).unwrap().is_none());
}

#[test]
fn concurrent_persists_do_not_interleave() {
    let dir = tempfile::tempdir().unwrap();
    let archive = RunArchive::create(dir.path(), &manifest("x"), &tasks()).unwrap();
    let big = "y".repeat(200_000);
    std::thread::scope(|s| {
        for i in 0..8 {
            let archive = &archive;
            let big = &big;
            s.spawn(move || {
                for round in 0..5 {
                    archive.persist_transcript(&transcript(&format!("w{i}"), &format!("{round}{big}"))).unwrap();
                }
            });
        }
    });
    let loaded = archive.load_transcripts().unwrap();
    assert_eq!(loaded.len(), 8);
    for t in loaded {
        assert_eq!(t.events[0].payload.len(), 200_001);
    }
}

#[test]
fn reopen_with_other_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    RunArchive::create(dir.path(), &manifest("x"), &tasks()).unwrap();
    let mut other = manifest("x");
    other.campaign.workers = 7;
    other.created_at_ms = 99;
    assert!(RunArchive::create(dir.path(), &other, &tasks()).is_ok());
    assert!(matches!(
        RunArchive::create(dir.path(), &manifest("y"), &tasks()),
        Err(ArchiveError::ConfigMismatch(_))
    ));
}

#[test]
fn missing_archive() {
    assert!(matches!(RunArchive::open("/nonexistent/archive"), Err(ArchiveError::MissingArchive(_))));
}
