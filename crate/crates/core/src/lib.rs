//! Staged code-generation agent with critic supervision.
//!
//! An actor model works through understanding, test generation and solution
//! reasoning; a critic model reviews each step in prose; candidates run in a
//! sandbox against the actor's own tests until they pass or the recursion
//! limit is hit. The harness scores final solutions against hidden tests.

pub mod archive;
pub mod gateway;
pub mod harness;
pub mod pipeline;
pub mod sandbox;
pub mod task;
pub mod vps;

pub use gateway::{Gateway, ModelRequest, ModelResponse};
pub use pipeline::{run_pipeline, PipelineConfig, Solution, StageKind, Transcript};
pub use sandbox::{ExecutionLimits, ExecutionReport, Executor, Sandbox};
pub use task::{Task, TaskMode};
