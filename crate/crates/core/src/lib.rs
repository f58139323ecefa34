//! Allocation-only core of the tinyforge lifecycle orchestrator.
//!
//! Everything in this crate is a pure function of its inputs: the stage input
//! schema, the per-stage retry state machine, sectioned prompt templates, code
//! extraction from model responses, token pricing, diagnostic excerpts and
//! the statistics layer. Filesystem, process, network and clock access live in
//! the `tinyforge` crate, which drives these pieces.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod code;
pub mod excerpt;
pub mod llm;
pub mod metrics;
pub mod pricing;
pub mod prompt;
pub mod run;
pub mod stage;

pub use code::{estimate_tokens, extract_code, CodeArtifact, CodeKind, NoCode};
pub use excerpt::{
    summarize_error, ErrorExcerpt, ExcerptOrigin, ExecutionOutcome, ExitStatus, NotAFailure,
    EXCERPT_LIMIT,
};
pub use llm::{LlmRequest, LlmResponse, Message, Role, UsageSource};
pub use metrics::{
    aggregate_by_stage, aggregate_stage_stats, attach_costs, render_report, scatter_csv,
    scatter_rows, scatter_table, tradeoff_csv, tradeoff_rows, tradeoff_table, MetricsError, ReportFormat, RunSample, ScatterRow, StageStats, TradeoffRow,
};
pub use pricing::{price, CostModel, PricingError, TokenUsage, Usd};
pub use prompt::{
    lint_template, render_prompt, PromptError, PromptTemplate, RenderedPrompt, SectionKind,
    TemplateRegistry,
};
pub use run::{
    chain_artifact, Attempt, AttemptOutcome, ChainError, PipelineRun, RetryLoop, RetryPolicy,
    StageOutcome, StageResult, Step, Timestamp,
};
pub use stage::{
    InputError, LifecycleStage, QuantizationTarget, RawStageInput, StageInput,
};
