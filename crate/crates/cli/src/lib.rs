//! The `cura` command line: run a campaign, report scores, replay an archive.
//!
//! Every command writes its user-facing output to the supplied writer and
//! returns the process exit code; infrastructure failures surface as errors.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use cura_core::archive::{load_results_file, Manifest, RunArchive};
use cura_core::gateway::{
    BackendKind, Cassette, Gateway, LiveBackend, LiveConfig, ModelBackend, RecordingBackend, ReplayBackend,
    ScriptedBackend,
};
use cura_core::harness::{compare, run_tasks, score, CampaignConfig, ScoreError, ScoreReport, TaskResult};
use cura_core::pipeline::PipelineConfig;
use cura_core::sandbox::{ExecutionLimits, Sandbox, SandboxConfig};
use cura_core::task::{load_tasks, TaskMode};

/// Exit code of `replay` when the rerun does not match the archive.
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "cura", version, about = "Supervised code-generation campaigns")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run (or resume) a campaign and write an archive.
    Run(Box<RunArgs>),
    /// Recompute scores from archived results.
    Report(ReportArgs),
    /// Re-run an archive against its own cassette and check for divergence.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Complete,
    Instruct,
    Both,
}

impl ModeArg {
    fn modes(self) -> Vec<TaskMode> {
        match self {
            ModeArg::Complete => vec![TaskMode::Complete],
            ModeArg::Instruct => vec![TaskMode::Instruct],
            ModeArg::Both => TaskMode::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Live,
    Replay,
    Scripted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Csv,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Task corpus (JSON Lines).
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    pub mode: ModeArg,
    #[arg(long, default_value = "gpt-4o-mini")]
    pub actor_model: String,
    /// Defaults to the actor model.
    #[arg(long)]
    pub critic_model: Option<String>,
    /// Single-shot generation with no supervision.
    #[arg(long)]
    pub baseline: bool,
    #[arg(long, default_value_t = 5)]
    pub recursion_limit: u32,
    #[arg(long, default_value_t = 0.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 0.0)]
    pub critic_temperature: f64,
    #[arg(long, default_value_t = 4)]
    pub workers: usize,
    #[arg(long, value_enum, default_value = "live")]
    pub backend: BackendArg,
    /// Cassette to serve from (replay backend).
    #[arg(long)]
    pub cassette: Option<PathBuf>,
    /// Script of canned replies (scripted backend).
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// Archive directory; an existing archive with the same config is resumed.
    #[arg(long)]
    pub out: PathBuf,
    /// Campaign label; defaults to "baseline" or "cura".
    #[arg(long)]
    pub label: Option<String>,
    /// OpenAI-compatible base URL (live backend).
    #[arg(long, default_value = "https://api.openai.com/v1")]
    pub endpoint: String,
    /// Environment variable holding the API key.
    #[arg(long, default_value = "OPENAI_API_KEY")]
    pub api_key_env: String,
    /// Model that must be called without a temperature field; repeatable.
    #[arg(long)]
    pub omit_temperature_model: Vec<String>,
    /// Sandbox wall clock per execution, in seconds.
    #[arg(long, default_value_t = 30)]
    pub timeout: u64,
    /// Sandbox address-space limit, in MiB.
    #[arg(long, default_value_t = 1024)]
    pub memory: u64,
    /// Captured bytes kept per output stream.
    #[arg(long, default_value_t = 65536)]
    pub max_output: usize,
    /// Run sandboxed code in an empty network namespace.
    #[arg(long)]
    pub deny_network: bool,
    /// Maximum concurrent sandbox executions.
    #[arg(long, default_value_t = 8)]
    pub max_concurrent: usize,
    /// HTTP timeout per model call, in seconds.
    #[arg(long, default_value_t = 300)]
    pub request_timeout: u64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub archive: PathBuf,
    /// Second archive to compare against; deltas are archive minus against.
    #[arg(long)]
    pub against: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub archive: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub workers: usize,
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::Run(args) => cmd_run(&args, out),
        Command::Report(args) => cmd_report(&args, out),
        Command::Replay(args) => cmd_replay(&args, out),
    }
}

fn campaign_from(args: &RunArgs) -> Result<CampaignConfig> {
    let critic = args.critic_model.clone().unwrap_or_else(|| args.actor_model.clone());
    let mut pipeline = PipelineConfig::new(&args.actor_model, &critic);
    pipeline.recursion_limit = args.recursion_limit;
    pipeline.actor_temperature = args.temperature;
    pipeline.critic_temperature = args.critic_temperature;
    pipeline.sandbox_limits = ExecutionLimits {
        wall_clock_ms: args.timeout.saturating_mul(1000),
        memory_bytes: args.memory.saturating_mul(1 << 20),
        max_output_bytes: args.max_output,
        ..ExecutionLimits::default()
    };
    let label = args.label.clone().unwrap_or_else(|| if args.baseline { "baseline" } else { "cura" }.into());
    let config = CampaignConfig {
        corpus: args.corpus.clone(),
        pipeline,
        modes: args.mode.modes(),
        workers: args.workers,
        label,
        baseline_mode: args.baseline,
    };
    config.validate()?;
    Ok(config)
}

fn backend_from(args: &RunArgs) -> Result<(Arc<dyn ModelBackend>, BackendKind)> {
    Ok(match args.backend {
        BackendArg::Live => {
            let mut live = LiveConfig::new(&args.endpoint, &args.api_key_env);
            live.omit_temperature_models = args.omit_temperature_model.iter().cloned().collect();
            live.timeout_secs = args.request_timeout;
            let kind = BackendKind::Live { endpoint: args.endpoint.clone(), credential_env: args.api_key_env.clone() };
            (Arc::new(LiveBackend::new(live)), kind)
        }
        BackendArg::Replay => {
            let path = args.cassette.clone().context("--backend replay requires --cassette")?;
            let backend = ReplayBackend::load(&path).with_context(|| format!("loading cassette {}", path.display()))?;
            (Arc::new(backend), BackendKind::Replay { cassette: path })
        }
        BackendArg::Scripted => {
            let path = args.script.clone().context("--backend scripted requires --script")?;
            let backend = ScriptedBackend::load(&path).with_context(|| format!("loading script {}", path.display()))?;
            (Arc::new(backend), BackendKind::Scripted { script: path })
        }
    })
}

fn now_ms() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn cmd_run(args: &RunArgs, out: &mut dyn Write) -> Result<i32> {
    let campaign = campaign_from(args)?;
    let tasks = load_tasks(&args.corpus).with_context(|| format!("loading corpus {}", args.corpus.display()))?;
    let (inner, backend) = backend_from(args)?;
    let sandbox_config =
        SandboxConfig { deny_network: args.deny_network, max_concurrent: args.max_concurrent, ..SandboxConfig::default() };
    let manifest =
        Manifest { campaign: campaign.clone(), backend, sandbox: sandbox_config.clone(), created_at_ms: now_ms() };
    let archive = RunArchive::create(&args.out, &manifest, &tasks)
        .with_context(|| format!("preparing archive {}", args.out.display()))?;
    let previous = archive.load_results()?;
    if !previous.is_empty() {
        log::info!("resuming {}: {} result(s) already committed", args.out.display(), previous.len());
    }
    let cassette = Arc::new(Cassette::open(archive.cassette_path())?);
    let gateway = Gateway::new(RecordingBackend::new(inner, cassette));
    let sandbox = Sandbox::new(sandbox_config);
    let (_, report) = run_tasks(&campaign, &tasks, previous, &gateway, &sandbox, &archive)?;
    archive.write_score(&report)?;
    write_table(out, &report)?;
    Ok(0)
}

fn archive_report(root: &Path) -> Result<ScoreReport> {
    let archive = RunArchive::open(root)?;
    let label = archive.manifest()?.campaign.label;
    let results = load_results_file(&root.join(cura_core::archive::RESULTS_FILE))?;
    score(&label, &results).with_context(|| format!("scoring {}", root.display()))
}

pub fn write_table(out: &mut dyn Write, report: &ScoreReport) -> std::io::Result<()> {
    writeln!(out, "{:<10} {:>8}", "Split", report.label)?;
    for (split, value) in report.rows() {
        writeln!(out, "{:<10} {:>8}", split.to_string(), value.to_string())?;
    }
    Ok(())
}

fn cmd_report(args: &ReportArgs, out: &mut dyn Write) -> Result<i32> {
    let a = archive_report(&args.archive)?;
    let Some(against) = &args.against else {
        match args.format {
            Format::Table => write_table(out, &a)?,
            Format::Csv => {
                writeln!(out, "campaign_label,split,score_percent")?;
                for (split, value) in a.rows() {
                    writeln!(out, "{},{},{}", csv_field(&a.label), split, value)?;
                }
            }
        }
        return Ok(0);
    };
    let b = archive_report(against)?;
    let table = match compare(&a, &b) {
        Ok(t) => t,
        Err(e @ ScoreError::SplitMismatch(_)) => bail!("cannot compare {} with {}: {e}", a.label, b.label),
        Err(e) => return Err(e.into()),
    };
    match args.format {
        Format::Table => {
            writeln!(out, "{:<10} {:>8} {:>8} {:>7}", "Split", table.label_a, table.label_b, "Delta")?;
            for r in &table.rows {
                writeln!(out, "{:<10} {:>8} {:>8} {:>7}", r.split.to_string(), r.a.to_string(), r.b.to_string(), r.delta.signed())?;
            }
        }
        Format::Csv => {
            writeln!(out, "campaign_label,split,score_percent")?;
            for (label, pick) in [(&table.label_a, 0), (&table.label_b, 1)] {
                for r in &table.rows {
                    let v = if pick == 0 { r.a } else { r.b };
                    writeln!(out, "{},{},{}", csv_field(label), r.split, v)?;
                }
            }
            for r in &table.rows {
                writeln!(out, "delta,{},{}", r.split, r.delta.signed())?;
            }
        }
    }
    Ok(0)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn cmd_replay(args: &ReplayArgs, out: &mut dyn Write) -> Result<i32> {
    let original = RunArchive::open(&args.archive)?;
    let manifest = original.manifest()?;
    let tasks = original.tasks()?;
    let recorded = original.load_results()?;
    if recorded.is_empty() {
        bail!("{} holds no results to replay", args.archive.display());
    }
    let backend = ReplayBackend::load(&original.cassette_path())?;

    let scratch = tempfile::tempdir()?;
    let mut campaign = manifest.campaign.clone();
    campaign.workers = args.workers.max(1);
    // Replay exactly the pairs the archive committed.
    campaign.modes = TaskMode::ALL.into_iter().filter(|m| recorded.iter().any(|r| r.mode == *m)).collect();
    let replay_manifest = Manifest {
        campaign: campaign.clone(),
        backend: BackendKind::Replay { cassette: original.cassette_path() },
        sandbox: manifest.sandbox.clone(),
        created_at_ms: now_ms(),
    };
    let rerun = RunArchive::create(scratch.path(), &replay_manifest, &tasks)?;
    let recorded_keys: std::collections::HashSet<_> = recorded.iter().map(TaskResult::key).collect();
    let tasks: Vec<_> = tasks
        .into_iter()
        .filter(|t| campaign.modes.iter().any(|m| recorded_keys.contains(&(t.task_id.clone(), *m))))
        .collect();
    let skip: Vec<TaskResult> = tasks
        .iter()
        .flat_map(|t| campaign.modes.iter().map(move |m| (t, *m)))
        .filter(|(t, m)| t.has_mode(*m) && !recorded_keys.contains(&(t.task_id.clone(), *m)))
        .map(|(t, m)| placeholder(t.task_id.clone(), m))
        .collect();
    let gateway = Gateway::new(backend);
    let sandbox = Sandbox::new(manifest.sandbox.clone());
    let (replayed, _) = run_tasks(&campaign, &tasks, skip.clone(), &gateway, &sandbox, &rerun)?;
    let replayed: Vec<TaskResult> =
        replayed.into_iter().filter(|r| !skip.iter().any(|s| s.key() == r.key())).collect();

    let mut divergences = Vec::new();
    for want in &recorded {
        let (id, mode) = want.key();
        let Some(got) = replayed.iter().find(|r| r.key() == want.key()) else {
            divergences.push(format!("{id} [{mode}]: not replayed"));
            continue;
        };
        let a = original.load_transcript(&id, mode)?;
        let b = rerun.load_transcript(&id, mode)?;
        match (a, b) {
            (Some(a), Some(b)) => {
                if let Some(d) = a.first_divergence(&b) {
                    divergences.push(format!("{id} [{mode}]: transcript diverges at {d}"));
                }
            }
            (None, _) => divergences.push(format!("{id} [{mode}]: archived transcript missing")),
            (_, None) => divergences.push(format!("{id} [{mode}]: replay produced no transcript")),
        }
        if want.without_timing() != got.without_timing() {
            let mut line = format!("{id} [{mode}]: result differs (solved {} -> {})", want.solved, got.solved);
            if let Some(f) = &got.failure {
                line.push_str(&format!("; replay failure: {f}"));
            }
            divergences.push(line);
        }
    }
    let original_score = score(&manifest.campaign.label, &recorded)?;
    let replay_score = score(&manifest.campaign.label, &replayed)?;
    if original_score != replay_score {
        let fmt = |r: &ScoreReport| {
            r.rows().iter().map(|(s, v)| format!("{s} {v}")).collect::<Vec<_>>().join(", ")
        };
        divergences.push(format!("score differs: archived [{}] vs replayed [{}]", fmt(&original_score), fmt(&replay_score)));
    }

    if divergences.is_empty() {
        writeln!(out, "replay matches: {} result(s) reproduced", recorded.len())?;
        write_table(out, &replay_score)?;
        Ok(0)
    } else {
        writeln!(out, "replay diverged in {} place(s):", divergences.len())?;
        for d in &divergences {
            writeln!(out, "  {d}")?;
        }
        Ok(EXIT_DIVERGED)
    }
}

/// A stand-in result that marks a pair as done so the replay skips it.
fn placeholder(task_id: String, mode: TaskMode) -> TaskResult {
    TaskResult {
        task_id,
        mode,
        solved: false,
        pipeline_verified: false,
        iterations_used: 0,
        actor_tokens: Default::default(),
        critic_tokens: Default::default(),
        wall_time_ms: 0,
        failure: None,
    }
}
