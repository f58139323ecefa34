//! Append-only trace of attempts and stage results, one JSON record per line.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use tinyforge_core::{
    Attempt, AttemptOutcome, LifecycleStage, StageOutcome, StageResult, Timestamp,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    Attempt,
    StageResult,
    ReviewRequested,
}

/// Attempt outcomes and stage outcomes share one field in the record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceOutcome {
    Success,
    Failure,
    ExecutionFailure,
    LlmFailure,
    NoCode,
    Timeout,
}

impl From<AttemptOutcome> for TraceOutcome {
    fn from(o: AttemptOutcome) -> Self {
        match o {
            AttemptOutcome::Success => TraceOutcome::Success,
            AttemptOutcome::ExecutionFailure => TraceOutcome::ExecutionFailure,
            AttemptOutcome::LlmFailure => TraceOutcome::LlmFailure,
            AttemptOutcome::NoCode => TraceOutcome::NoCode,
            AttemptOutcome::Timeout => TraceOutcome::Timeout,
        }
    }
}

impl From<StageOutcome> for TraceOutcome {
    fn from(o: StageOutcome) -> Self {
        match o {
            StageOutcome::Success => TraceOutcome::Success,
            StageOutcome::Failure => TraceOutcome::Failure,
        }
    }
}

impl TraceOutcome {
    pub fn stage_outcome(self) -> Option<StageOutcome> {
        match self {
            TraceOutcome::Success => Some(StageOutcome::Success),
            TraceOutcome::Failure => Some(StageOutcome::Failure),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TraceOutcome::Success => "success",
            TraceOutcome::Failure => "failure",
            TraceOutcome::ExecutionFailure => "execution_failure",
            TraceOutcome::LlmFailure => "llm_failure",
            TraceOutcome::NoCode => "no_code",
            TraceOutcome::Timeout => "timeout",
        }
    }
}

mod rfc3339 {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{de::Error, Deserialize, Deserializer, Serializer};
    use tinyforge_core::Timestamp;

    pub fn format(ts: Timestamp) -> String {
        DateTime::<Utc>::from_timestamp_millis(ts.as_millis())
            .unwrap_or_default()
            .to_rfc3339_opts(SecondsFormat::Millis, true)
    }

    pub fn serialize<S: Serializer>(ts: &Timestamp, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format(*ts))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Timestamp, D::Error> {
        let s = String::deserialize(d)?;
        let dt = DateTime::parse_from_rfc3339(&s).map_err(D::Error::custom)?;
        Ok(Timestamp::from_millis(dt.timestamp_millis()))
    }
}

pub use rfc3339::format as format_timestamp;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEvent {
    pub run_id: String,
    pub stage: LifecycleStage,
    /// Attempt number for attempt events; attempt count for the others.
    pub attempt_index: u32,
    pub kind: TraceKind,
    #[serde(with = "rfc3339")]
    pub ts_start: Timestamp,
    #[serde(with = "rfc3339")]
    pub ts_end: Timestamp,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub outcome: TraceOutcome,
    pub error_excerpt: Option<String>,
    pub artifact_locator: Option<String>,
    pub prompt_hash: Option<String>,
}

pub type EventKey = (String, LifecycleStage, u32, TraceKind);

impl TraceEvent {
    pub fn attempt(
        run_id: &str,
        stage: LifecycleStage,
        attempt: &Attempt,
        artifact_locator: Option<String>,
        prompt_hash: String,
    ) -> Self {
        Self {
            run_id: run_id.into(),
            stage,
            attempt_index: attempt.index,
            kind: TraceKind::Attempt,
            ts_start: attempt.started_at,
            ts_end: attempt.ended_at,
            prompt_tokens: attempt.prompt_tokens,
            completion_tokens: attempt.completion_tokens,
            outcome: attempt.outcome().into(),
            error_excerpt: attempt.error_excerpt().map(Into::into),
            artifact_locator,
            prompt_hash: Some(prompt_hash),
        }
    }

    pub fn stage_result(run_id: &str, result: &StageResult) -> Self {
        let usage = result.usage();
        Self {
            run_id: run_id.into(),
            stage: result.stage,
            attempt_index: result.attempts().len() as u32,
            kind: TraceKind::StageResult,
            ts_start: result.started_at(),
            ts_end: result.ended_at(),
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
            outcome: result.outcome().into(),
            error_excerpt: result
                .attempts()
                .last()
                .and_then(|a| a.error_excerpt())
                .map(Into::into),
            artifact_locator: result.artifact_locator().map(Into::into),
            prompt_hash: None,
        }
    }

    /// Alert asking a human to look at a stage that exhausted its retries.
    pub fn review_requested(run_id: &str, result: &StageResult) -> Self {
        Self {
            kind: TraceKind::ReviewRequested,
            ts_start: result.ended_at(),
            artifact_locator: None,
            ..Self::stage_result(run_id, result)
        }
    }

    pub fn key(&self) -> EventKey {
        (self.run_id.clone(), self.stage, self.attempt_index, self.kind)
    }

    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    pub fn to_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("trace event serializes");
        line.push('\n');
        line
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace store {path} is unwritable: {source}")]
    StoreUnwritable { path: PathBuf, source: io::Error },
    #[error("duplicate trace event {0:?}")]
    DuplicateEvent(EventKey),
    #[error("run {0} not found in trace")]
    RunNotFound(String),
    #[error("reading trace {path}: {source}")]
    Unreadable { path: PathBuf, source: io::Error },
}

/// Destination for trace events. Implementations serialize appends.
pub trait TraceSink: Send + Sync {
    fn append_event(&self, event: &TraceEvent) -> Result<(), TraceError>;
}

/// In-memory sink for tests and dry runs.
#[derive(Debug, Default)]
pub struct MemorySink {
    events: Mutex<Vec<TraceEvent>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> Vec<TraceEvent> {
        self.events.lock().unwrap().clone()
    }
}

impl TraceSink for MemorySink {
    fn append_event(&self, event: &TraceEvent) -> Result<(), TraceError> {
        let mut events = self.events.lock().unwrap();
        if events.iter().any(|e| e.key() == event.key()) {
            return Err(TraceError::DuplicateEvent(event.key()));
        }
        events.push(event.clone());
        Ok(())
    }
}

struct StoreState {
    file: File,
    keys: HashSet<EventKey>,
}

/// Line-delimited JSON file opened in append mode.
///
/// Each record goes out in a single write followed by a data sync, under a
/// lock shared by every writer in the process.
pub struct TraceStore {
    path: PathBuf,
    state: Mutex<StoreState>,
}

impl TraceStore {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, TraceError> {
        let path = path.into();
        let unwritable = |source| TraceError::StoreUnwritable {
            path: path.clone(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(unwritable)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(unwritable)?;
        let keys = read_lines(&path)?
            .into_iter()
            .filter_map(|(_, l)| serde_json::from_str::<TraceEvent>(&l).ok())
            .map(|e| e.key())
            .collect();
        Ok(Self {
            path,
            state: Mutex::new(StoreState { file, keys }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl TraceSink for TraceStore {
    fn append_event(&self, event: &TraceEvent) -> Result<(), TraceError> {
        let mut state = self.state.lock().unwrap_or_else(|p| p.into_inner());
        let key = event.key();
        if state.keys.contains(&key) {
            return Err(TraceError::DuplicateEvent(key));
        }
        let line = event.to_line();
        let unwritable = |source| TraceError::StoreUnwritable {
            path: self.path.clone(),
            source,
        };
        state.file.write_all(line.as_bytes()).map_err(unwritable)?;
        state.file.sync_data().map_err(unwritable)?;
        state.keys.insert(key);
        Ok(())
    }
}

/// Numbered lines (1-based). A final line without a newline is kept; it is
/// what a torn or in-progress write looks like.
fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, TraceError> {
    let unreadable = |source| TraceError::Unreadable {
        path: path.into(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(unreadable)?);
    let mut out = Vec::new();
    for (i, line) in reader.split(b'\n').enumerate() {
        let bytes = line.map_err(unreadable)?;
        out.push((i + 1, String::from_utf8_lossy(&bytes).into_owned()));
    }
    Ok(out)
}

/// Every well-formed event in append order. Malformed lines are skipped.
pub fn load_all(path: &Path) -> Result<Vec<TraceEvent>, TraceError> {
    Ok(read_lines(path)?
        .into_iter()
        .filter_map(|(_, l)| serde_json::from_str(&l).ok())
        .collect())
}

/// Events of one run in append order.
pub fn load_run(path: &Path, run_id: &str) -> Result<Vec<TraceEvent>, TraceError> {
    let events: Vec<TraceEvent> = load_all(path)?
        .into_iter()
        .filter(|e| e.run_id == run_id)
        .collect();
    if events.is_empty() {
        return Err(TraceError::RunNotFound(run_id.into()));
    }
    Ok(events)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceIssue {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for TraceIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

/// Checks every line for schema conformance and the store invariants.
/// An empty list means the store is valid.
pub fn verify_trace(path: &Path) -> Result<Vec<TraceIssue>, TraceError> {
    let lines = read_lines(path)?;
    let mut issues = Vec::new();
    let mut seen: BTreeMap<EventKey, usize> = BTreeMap::new();
    let mut attempts: BTreeMap<(String, LifecycleStage), u32> = BTreeMap::new();
    let last = lines.len();
    for (line, text) in lines {
        let mut issue = |message: String| issues.push(TraceIssue { line, message });
        if text.is_empty() {
            // the newline that ends the final record
            if line != last {
                issue("empty record".into());
            }
            continue;
        }
        let event: TraceEvent = match serde_json::from_str(&text) {
            Ok(e) => e,
            Err(e) => {
                issue(format!("malformed record: {e}"));
                continue;
            }
        };
        if event.ts_end < event.ts_start {
            issue(format!(
                "ts_end {} precedes ts_start {}",
                format_timestamp(event.ts_end),
                format_timestamp(event.ts_start)
            ));
        }
        if event.attempt_index == 0 {
            issue("attempt_index must be at least 1".into());
        }
        let is_stage_outcome = event.outcome.stage_outcome().is_some();
        match event.kind {
            TraceKind::Attempt => {
                let stage_key = (event.run_id.clone(), event.stage);
                let n = attempts.entry(stage_key).or_default();
                *n += 1;
                if event.attempt_index != *n {
                    issue(format!(
                        "attempt {} out of sequence, expected {}",
                        event.attempt_index, n
                    ));
                }
                if event.outcome == TraceOutcome::Failure {
                    issue("attempt outcome must not be `failure`".into());
                }
            }
            TraceKind::StageResult | TraceKind::ReviewRequested => {
                if !is_stage_outcome {
                    issue(format!(
                        "{:?} outcome must be success or failure, got {}",
                        event.kind,
                        event.outcome.as_str()
                    ));
                }
                let recorded = attempts
                    .get(&(event.run_id.clone(), event.stage))
                    .copied()
                    .unwrap_or(0);
                if event.kind == TraceKind::StageResult && recorded != event.attempt_index {
                    issue(format!(
                        "stage result counts {} attempts but {} were recorded",
                        event.attempt_index, recorded
                    ));
                }
            }
        }
        if event.outcome != TraceOutcome::Success
            && event.kind != TraceKind::ReviewRequested
            && event.error_excerpt.as_deref().is_none_or(str::is_empty)
        {
            issue("failed record has no error_excerpt".into());
        }
        if let Some(first) = seen.insert(event.key(), line) {
            issue(format!("duplicate event key, first seen on line {first}"));
        }
    }
    Ok(issues)
}
