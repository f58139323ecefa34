//! Std side of tinyforge: providers, local execution, run workspaces, the
//! trace store, configuration and the command-line front end.
//!
//! The pure pieces (stage schema, retry loop, templates, pricing, metrics)
//! come from [`tinyforge_core`] and are re-exported as [`core`].

pub use tinyforge_core as core;

pub mod bench;
pub mod cli;
pub mod clock;
pub mod config;
pub mod executor;
pub mod input;
pub mod llm;
pub mod pipeline;
pub mod report;
pub mod templates;
pub mod trace;
pub mod workspace;

pub use clock::{Clock, ClockMode, SimulatedClock, SystemClock};
pub use config::Config;
pub use executor::{
    compile_sketch, execute_script, upload_binary, ArduinoCli, CompileOutcome, ExecutionKind,
    ExecutionSpec, ExecutorError, MockToolchain, ScriptRunner, ToolchainAdapter,
};
pub use input::validate_stage_input;
pub use llm::{Completion, LlmProvider, ProviderError, ProviderSource};
pub use pipeline::{Orchestrator, PipelineError, PipelineInputs, PipelineOutput, RequestSettings};
pub use trace::{
    load_all, load_run, verify_trace, MemorySink, TraceError, TraceEvent, TraceKind, TraceOutcome,
    TraceSink, TraceStore,
};
pub use workspace::RunWorkspace;
