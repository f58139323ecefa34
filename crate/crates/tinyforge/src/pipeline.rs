//! Stage driver: render → invoke → extract → execute → retry, and the
//! three-stage pipeline that chains artifacts between stages.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use tinyforge_core::{
    chain_artifact, extract_code, summarize_error, Attempt, AttemptOutcome, ChainError,
    CodeArtifact, CodeKind, ExecutionOutcome, InputError, LifecycleStage, LlmRequest, PipelineRun,
    PromptError, RawStageInput, RetryLoop, RetryPolicy, StageInput, StageResult, Step,
    TemplateRegistry, TokenUsage, UsageSource,
};
use tinyforge_core::run::LoopError;

use crate::clock::{Clock, ClockMode};
use crate::executor::{
    compile_sketch, execute_script, upload_binary, ExecutionKind, ExecutionSpec, ExecutorError,
    ScriptRunner, ToolchainAdapter,
};
use crate::input::{check_pipeline_input, validate_stage_input};
use crate::llm::{LlmProvider, ProviderError, ProviderSource};
use crate::trace::{TraceError, TraceEvent, TraceSink};
use crate::workspace::{
    RunWorkspace, ARTIFACTS_DIR, PROMPT_FILE, RESPONSE_FILE, STDERR_FILE, STDOUT_FILE,
};

/// Data-processing scripts write their output here, relative to the attempt.
pub const DP_ARTIFACT: &str = "artifacts/processed";
pub const MC_ARTIFACT: &str = "artifacts/model.tflite";
pub const SKETCH_NAME: &str = "sketch";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Input(#[from] InputError),
    #[error("no input provided for stage {0}")]
    MissingStageInput(LifecycleStage),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Executor(#[from] ExecutorError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("run workspace: {0}")]
    Workspace(#[from] io::Error),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Loop(#[from] LoopError),
}

#[derive(Debug, Clone)]
pub struct RequestSettings {
    pub system_prompt: Option<String>,
    pub model_name: String,
    pub temperature: f32,
}

pub const DEFAULT_SYSTEM_PROMPT: &str = "You are an expert embedded machine-learning engineer. \
Answer with complete, runnable code that follows the requested output format exactly.";

impl Default for RequestSettings {
    fn default() -> Self {
        Self {
            system_prompt: Some(DEFAULT_SYSTEM_PROMPT.into()),
            model_name: "gpt-4o-2024-08-06".into(),
            temperature: 0.2,
        }
    }
}

/// User-supplied inputs for the stages of a run.
#[derive(Debug, Clone, Default)]
pub struct PipelineInputs {
    inputs: BTreeMap<LifecycleStage, RawStageInput>,
}

impl PipelineInputs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, raw: RawStageInput) -> Self {
        self.insert(raw);
        self
    }

    pub fn insert(&mut self, raw: RawStageInput) {
        self.inputs.insert(raw.stage, raw);
    }

    pub fn get(&self, stage: LifecycleStage) -> Option<&RawStageInput> {
        self.inputs.get(&stage)
    }

    fn require(&self, stage: LifecycleStage) -> Result<&RawStageInput, PipelineError> {
        self.get(stage).ok_or(PipelineError::MissingStageInput(stage))
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub run: PipelineRun,
    /// The validated input each executed stage ran with, after chaining.
    pub inputs: Vec<StageInput>,
}

/// Everything needed to drive stages. Shared read-only across bench runs.
pub struct Orchestrator {
    pub templates: Arc<TemplateRegistry>,
    pub runner: ScriptRunner,
    /// File name of generated interpreter scripts inside an attempt.
    pub script_name: String,
    pub toolchain: Arc<dyn ToolchainAdapter>,
    /// Upload after a successful compile when set.
    pub upload_port: Option<String>,
    pub trace: Arc<dyn TraceSink>,
    pub request: RequestSettings,
    pub workspace_root: PathBuf,
    pub clock: ClockMode,
    pub policy: RetryPolicy,
}

enum Executed {
    Success(PathBuf),
    Failure(AttemptOutcome, String),
}

fn failure_from(outcome: &ExecutionOutcome) -> Executed {
    let excerpt = summarize_error(outcome).map(|e| e.text).unwrap_or_default();
    let kind = if outcome.timed_out() {
        AttemptOutcome::Timeout
    } else {
        AttemptOutcome::ExecutionFailure
    };
    Executed::Failure(kind, excerpt)
}

fn code_kind(stage: LifecycleStage) -> CodeKind {
    match stage {
        LifecycleStage::SketchGeneration => CodeKind::BoardSketch,
        _ => CodeKind::InterpreterScript,
    }
}

fn save_streams(dir: &Path, outcome: &ExecutionOutcome) -> io::Result<()> {
    fs::write(dir.join(STDOUT_FILE), &outcome.stdout)?;
    fs::write(dir.join(STDERR_FILE), &outcome.stderr)
}

impl Orchestrator {
    fn execute(
        &self,
        input: &StageInput,
        dir: &Path,
        code: &CodeArtifact,
    ) -> Result<Executed, PipelineError> {
        let timeout = self.policy.per_execution_timeout();
        let stage = input.stage();
        if stage == LifecycleStage::SketchGeneration {
            let sketch_dir = dir.join(ARTIFACTS_DIR).join(SKETCH_NAME);
            fs::create_dir_all(&sketch_dir)?;
            let sketch = sketch_dir.join(format!("{SKETCH_NAME}.ino"));
            fs::write(&sketch, &code.code)?;
            let board = input.board_id().map(String::from);
            let spec = ExecutionSpec {
                kind: ExecutionKind::ToolchainCompile,
                code_or_binary_path: sketch,
                workspace: dir.into(),
                board_id: board.clone(),
                port: None,
                timeout,
            };
            let compiled = compile_sketch(&spec, self.toolchain.as_ref())?;
            save_streams(dir, &compiled.outcome)?;
            if !compiled.outcome.succeeded() {
                return Ok(failure_from(&compiled.outcome));
            }
            if let Some(port) = &self.upload_port {
                let spec = ExecutionSpec {
                    kind: ExecutionKind::ToolchainUpload,
                    code_or_binary_path: sketch_dir.clone(),
                    workspace: dir.into(),
                    board_id: board,
                    port: Some(port.clone()),
                    timeout,
                };
                let uploaded = upload_binary(&spec, self.toolchain.as_ref())?;
                if !uploaded.succeeded() {
                    save_streams(dir, &uploaded)?;
                    return Ok(failure_from(&uploaded));
                }
            }
            return Ok(Executed::Success(sketch_dir));
        }

        let script = dir.join(&self.script_name);
        fs::write(&script, &code.code)?;
        let spec = ExecutionSpec {
            kind: ExecutionKind::InterpreterScript,
            code_or_binary_path: script,
            workspace: dir.into(),
            board_id: None,
            port: None,
            timeout,
        };
        let outcome = execute_script(&spec, &self.runner)?;
        save_streams(dir, &outcome)?;
        if !outcome.succeeded() {
            return Ok(failure_from(&outcome));
        }
        let (rel, ok) = match stage {
            LifecycleStage::DataProcessing => (DP_ARTIFACT, dir.join(DP_ARTIFACT).exists()),
            _ => (
                MC_ARTIFACT,
                fs::metadata(dir.join(MC_ARTIFACT)).is_ok_and(|m| m.is_file() && m.len() > 0),
            ),
        };
        Ok(if ok {
            Executed::Success(dir.join(rel))
        } else {
            let what = if stage == LifecycleStage::DataProcessing {
                "create"
            } else {
                "write a non-empty"
            };
            Executed::Failure(
                AttemptOutcome::ExecutionFailure,
                format!("script exited with status 0 but did not {what} `{rel}`"),
            )
        })
    }

    /// Runs one stage to a terminal outcome.
    ///
    /// Attempt-level problems (provider errors, missing code, failed
    /// execution, timeouts) become attempt outcomes and feed the next
    /// prompt. Only infrastructure faults are returned as errors.
    pub fn run_stage(
        &self,
        run_id: &str,
        input: &StageInput,
        provider: &mut dyn LlmProvider,
        clock: &dyn Clock,
    ) -> Result<StageResult, PipelineError> {
        let stage = input.stage();
        let ws = RunWorkspace::create(&self.workspace_root, run_id)?;
        let mut lp = RetryLoop::new(stage, self.policy);
        let mut artifact = None;
        while let Step::Attempt { index, prior_error } = lp.next_step() {
            let dir = ws.attempt_dir(stage, index)?;
            let prompt = self.templates.render(input, prior_error.as_deref(), index)?;
            fs::write(dir.join(PROMPT_FILE), &prompt.text)?;
            let prompt_hash = ws.prompt_hash(&prompt.text);
            let request = LlmRequest::new(
                self.request.system_prompt.as_deref(),
                prompt.text,
                self.request.model_name.clone(),
                self.request.temperature,
            );

            let started = clock.now();
            let completion = provider.complete(&request);
            let (usage, source, executed) = match completion {
                Err(e) => (
                    TokenUsage::default(),
                    UsageSource::Estimated,
                    Executed::Failure(AttemptOutcome::LlmFailure, e.to_string()),
                ),
                Ok(c) => {
                    if let Some(latency) = c.simulated_latency {
                        clock.advance(latency);
                    }
                    fs::write(dir.join(RESPONSE_FILE), &c.response.content)?;
                    let executed = match extract_code(&c.response.content, code_kind(stage)) {
                        Err(e) => Executed::Failure(AttemptOutcome::NoCode, e.to_string()),
                        Ok(code) => self.execute(input, &dir, &code)?,
                    };
                    (c.response.usage, c.response.usage_source, executed)
                }
            };
            let ended = clock.now();

            let (attempt, locator) = match executed {
                Executed::Success(path) => (
                    Attempt::succeeded(index, usage, source, started, ended),
                    Some(path.display().to_string()),
                ),
                Executed::Failure(outcome, excerpt) => (
                    Attempt::failed(index, usage, source, started, ended, outcome, excerpt),
                    None,
                ),
            };
            self.trace.append_event(&TraceEvent::attempt(
                run_id,
                stage,
                &attempt,
                locator.clone(),
                prompt_hash,
            ))?;
            artifact = locator;
            lp.record(attempt)?;
        }

        let result = lp.finish(clock.now(), artifact)?;
        self.trace
            .append_event(&TraceEvent::stage_result(run_id, &result))?;
        if !result.succeeded() {
            self.trace
                .append_event(&TraceEvent::review_requested(run_id, &result))?;
        }
        Ok(result)
    }

    /// Validates `raw` and runs its stage on a fresh clock.
    pub fn run_single(
        &self,
        run_id: &str,
        raw: &RawStageInput,
        source: &dyn ProviderSource,
        ordinal: u64,
    ) -> Result<StageResult, PipelineError> {
        let input = validate_stage_input(raw.stage, raw)?;
        let mut provider = source.provider(raw.stage, ordinal)?;
        let clock = self.clock.start();
        self.run_stage(run_id, &input, provider.as_mut(), clock.as_ref())
    }

    /// Runs data processing, model conversion and sketch generation in
    /// order, feeding each artifact into the next stage's input and halting
    /// at the first failed stage.
    pub fn run_pipeline(
        &self,
        run_id: &str,
        inputs: &PipelineInputs,
        source: &dyn ProviderSource,
        ordinal: u64,
    ) -> Result<PipelineOutput, PipelineError> {
        for stage in LifecycleStage::ALL {
            let raw = inputs.require(stage)?;
            match stage {
                LifecycleStage::DataProcessing => {
                    validate_stage_input(stage, raw)?;
                }
                _ => check_pipeline_input(stage, raw)?,
            }
        }

        let clock = self.clock.start();
        let mut run = PipelineRun::new(run_id);
        let mut used = Vec::new();
        let mut prev: Option<StageResult> = None;
        for stage in LifecycleStage::ALL {
            let mut raw = inputs.require(stage)?.clone();
            if let Some(p) = &prev {
                if !p.succeeded() {
                    break;
                }
                raw = chain_artifact(p, raw)?;
            }
            let input = validate_stage_input(stage, &raw)?;
            let mut provider = source.provider(stage, ordinal)?;
            let result = self.run_stage(run_id, &input, provider.as_mut(), clock.as_ref())?;
            used.push(input);
            run.push(result.clone())
                .expect("stages are pushed in order and stop after a failure");
            prev = Some(result);
        }
        Ok(PipelineOutput { run, inputs: used })
    }
}
