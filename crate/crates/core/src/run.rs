//! Per-stage retry state machine, stage results and artifact chaining.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::time::Duration;

use serde::{Deserialize, Serialize};

use crate::llm::UsageSource;
use crate::pricing::TokenUsage;
use crate::stage::{LifecycleStage, RawStageInput};

/// Milliseconds since the Unix epoch, UTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn from_millis(ms: i64) -> Self {
        Timestamp(ms)
    }

    pub fn as_millis(self) -> i64 {
        self.0
    }

    /// Elapsed time from `earlier` to `self`, saturating at zero.
    pub fn since(self, earlier: Timestamp) -> Duration {
        Duration::from_millis(self.0.saturating_sub(earlier.0).max(0) as u64)
    }

    pub fn add(self, d: Duration) -> Timestamp {
        Timestamp(self.0.saturating_add(d.as_millis() as i64))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    max_attempts: u32,
    per_execution_timeout: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error("max_attempts must be at least 1")]
    ZeroAttempts,
    #[error("per-execution timeout must be positive")]
    ZeroTimeout,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            per_execution_timeout: Duration::from_secs(300),
        }
    }
}

impl RetryPolicy {
    pub fn new(max_attempts: u32, per_execution_timeout: Duration) -> Result<Self, PolicyError> {
        if max_attempts == 0 {
            return Err(PolicyError::ZeroAttempts);
        }
        if per_execution_timeout.is_zero() {
            return Err(PolicyError::ZeroTimeout);
        }
        Ok(Self {
            max_attempts,
            per_execution_timeout,
        })
    }

    pub fn max_attempts(&self) -> u32 {
        self.max_attempts
    }

    pub fn per_execution_timeout(&self) -> Duration {
        self.per_execution_timeout
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttemptOutcome {
    Success,
    ExecutionFailure,
    LlmFailure,
    NoCode,
    Timeout,
}

impl AttemptOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            AttemptOutcome::Success => "success",
            AttemptOutcome::ExecutionFailure => "execution_failure",
            AttemptOutcome::LlmFailure => "llm_failure",
            AttemptOutcome::NoCode => "no_code",
            AttemptOutcome::Timeout => "timeout",
        }
    }
}

impl fmt::Display for AttemptOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One generate → extract → execute cycle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attempt {
    pub index: u32,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub usage_source: UsageSource,
    pub started_at: Timestamp,
    pub ended_at: Timestamp,
    outcome: AttemptOutcome,
    error_excerpt: Option<String>,
}

impl Attempt {
    pub fn succeeded(
        index: u32,
        usage: TokenUsage,
        usage_source: UsageSource,
        started_at: Timestamp,
        ended_at: Timestamp,
    ) -> Self {
        Self {
            index,
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
            usage_source,
            started_at,
            ended_at,
            outcome: AttemptOutcome::Success,
            error_excerpt: None,
        }
    }

    /// A failed attempt. `outcome` must not be `Success`; an empty excerpt
    /// is replaced with the outcome name so the next prompt always carries
    /// something.
    pub fn failed(
        index: u32,
        usage: TokenUsage,
        usage_source: UsageSource,
        started_at: Timestamp,
        ended_at: Timestamp,
        outcome: AttemptOutcome,
        excerpt: String,
    ) -> Self {
        assert!(
            outcome != AttemptOutcome::Success,
            "failed attempt with success outcome"
        );
        let excerpt = if excerpt.trim().is_empty() {
            String::from(outcome.as_str())
        } else {
            excerpt
        };
        Self {
            index,
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
            usage_source,
            started_at,
            ended_at,
            outcome,
            error_excerpt: Some(excerpt),
        }
    }

    pub fn outcome(&self) -> AttemptOutcome {
        self.outcome
    }

    pub fn error_excerpt(&self) -> Option<&str> {
        self.error_excerpt.as_deref()
    }

    pub fn usage(&self) -> TokenUsage {
        TokenUsage::new(self.prompt_tokens, self.completion_tokens)
    }

    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageOutcome {
    Success,
    Failure,
}

impl StageOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            StageOutcome::Success => "success",
            StageOutcome::Failure => "failure",
        }
    }
}

impl fmt::Display for StageOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageResult {
    pub stage: LifecycleStage,
    attempts: Vec<Attempt>,
    outcome: StageOutcome,
    artifact_locator: Option<String>,
    started_at: Timestamp,
    ended_at: Timestamp,
}

impl StageResult {
    pub fn attempts(&self) -> &[Attempt] {
        &self.attempts
    }

    pub fn outcome(&self) -> StageOutcome {
        self.outcome
    }

    pub fn succeeded(&self) -> bool {
        self.outcome == StageOutcome::Success
    }

    pub fn artifact_locator(&self) -> Option<&str> {
        self.artifact_locator.as_deref()
    }

    /// First provider call.
    pub fn started_at(&self) -> Timestamp {
        self.started_at
    }

    pub fn ended_at(&self) -> Timestamp {
        self.ended_at
    }

    pub fn total_duration(&self) -> Duration {
        self.ended_at.since(self.started_at)
    }

    /// Token usage summed over every attempt, failed ones included.
    pub fn usage(&self) -> TokenUsage {
        self.attempts
            .iter()
            .fold(TokenUsage::default(), |acc, a| acc + a.usage())
    }

    pub fn total_tokens(&self) -> u64 {
        self.usage().total()
    }
}

/// What the driver should do next.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    /// Run attempt `index`, feeding `prior_error` into the prompt when set.
    Attempt {
        index: u32,
        prior_error: Option<String>,
    },
    Done(StageOutcome),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LoopError {
    #[error("stage loop already reached a terminal outcome")]
    Finished,
    #[error("expected attempt {expected}, got {got}")]
    IndexMismatch { expected: u32, got: u32 },
    #[error("stage loop has not reached a terminal outcome")]
    NotFinished,
}

/// Retry controller for one stage run.
///
/// The loop stops on the first successful attempt or once the policy's
/// attempt budget is spent. Each attempt after the first is handed the error
/// excerpt of its predecessor.
#[derive(Debug, Clone)]
pub struct RetryLoop {
    stage: LifecycleStage,
    policy: RetryPolicy,
    attempts: Vec<Attempt>,
}

impl RetryLoop {
    pub fn new(stage: LifecycleStage, policy: RetryPolicy) -> Self {
        Self {
            stage,
            policy,
            attempts: Vec::new(),
        }
    }

    pub fn stage(&self) -> LifecycleStage {
        self.stage
    }

    pub fn attempts(&self) -> &[Attempt] {
        &self.attempts
    }

    pub fn next_step(&self) -> Step {
        match self.attempts.last() {
            Some(a) if a.outcome() == AttemptOutcome::Success => Step::Done(StageOutcome::Success),
            _ if self.attempts.len() as u32 >= self.policy.max_attempts() => {
                Step::Done(StageOutcome::Failure)
            }
            last => Step::Attempt {
                index: self.attempts.len() as u32 + 1,
                prior_error: last.and_then(|a| a.error_excerpt.clone()),
            },
        }
    }

    pub fn record(&mut self, attempt: Attempt) -> Result<Step, LoopError> {
        match self.next_step() {
            Step::Done(_) => Err(LoopError::Finished),
            Step::Attempt { index, .. } if index != attempt.index => Err(LoopError::IndexMismatch {
                expected: index,
                got: attempt.index,
            }),
            Step::Attempt { .. } => {
                self.attempts.push(attempt);
                Ok(self.next_step())
            }
        }
    }

    /// Closes the loop. The artifact is kept only for a successful stage.
    pub fn finish(
        self,
        ended_at: Timestamp,
        artifact_locator: Option<String>,
    ) -> Result<StageResult, LoopError> {
        let outcome = match self.next_step() {
            Step::Done(o) => o,
            Step::Attempt { .. } => return Err(LoopError::NotFinished),
        };
        let started_at = self.attempts[0].started_at;
        Ok(StageResult {
            stage: self.stage,
            outcome,
            artifact_locator: artifact_locator.filter(|_| outcome == StageOutcome::Success),
            started_at,
            ended_at: ended_at.max(started_at),
            attempts: self.attempts,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChainError {
    #[error("previous stage {0} did not succeed")]
    PreviousStageFailed(LifecycleStage),
    #[error("cannot feed a {from} result into {to}")]
    IncompatibleStagePair {
        from: LifecycleStage,
        to: LifecycleStage,
    },
    #[error("previous stage {0} produced no artifact")]
    MissingArtifact(LifecycleStage),
}

/// Fills `next`'s upstream locator with the artifact of `prev`.
///
/// Data processing feeds the representative dataset of model conversion;
/// model conversion feeds the converted model of sketch generation.
pub fn chain_artifact(
    prev: &StageResult,
    mut next: RawStageInput,
) -> Result<RawStageInput, ChainError> {
    if prev.stage.next() != Some(next.stage) {
        return Err(ChainError::IncompatibleStagePair {
            from: prev.stage,
            to: next.stage,
        });
    }
    if !prev.succeeded() {
        return Err(ChainError::PreviousStageFailed(prev.stage));
    }
    let artifact = prev
        .artifact_locator()
        .ok_or(ChainError::MissingArtifact(prev.stage))?;
    match next.stage {
        LifecycleStage::ModelConversion => {
            next.fields.representative_data_locator = Some(artifact.into())
        }
        LifecycleStage::SketchGeneration => {
            next.fields.converted_model_locator = Some(artifact.into())
        }
        LifecycleStage::DataProcessing => unreachable!("data processing has no predecessor"),
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PipelineError {
    #[error("stage {got} cannot follow {after:?}")]
    OutOfOrder {
        after: Option<LifecycleStage>,
        got: LifecycleStage,
    },
    #[error("pipeline already halted at {0}")]
    Halted(LifecycleStage),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub run_id: String,
    stage_results: Vec<StageResult>,
    halted_at: Option<LifecycleStage>,
}

impl PipelineRun {
    pub fn new(run_id: impl Into<String>) -> Self {
        Self {
            run_id: run_id.into(),
            stage_results: Vec::new(),
            halted_at: None,
        }
    }

    /// Appends a stage result, enforcing stage order and halting on failure.
    pub fn push(&mut self, result: StageResult) -> Result<(), PipelineError> {
        if let Some(stage) = self.halted_at {
            return Err(PipelineError::Halted(stage));
        }
        let after = self.stage_results.last().map(|r| r.stage);
        if after.is_some_and(|prev| prev >= result.stage) {
            return Err(PipelineError::OutOfOrder {
                after,
                got: result.stage,
            });
        }
        if !result.succeeded() {
            self.halted_at = Some(result.stage);
        }
        self.stage_results.push(result);
        Ok(())
    }

    pub fn stage_results(&self) -> &[StageResult] {
        &self.stage_results
    }

    pub fn halted_at(&self) -> Option<LifecycleStage> {
        self.halted_at
    }

    pub fn succeeded(&self) -> bool {
        self.halted_at.is_none() && !self.stage_results.is_empty()
    }
}
