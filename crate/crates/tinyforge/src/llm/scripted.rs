use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use tinyforge_core::{LifecycleStage, LlmRequest, LlmResponse, TokenUsage};

use super::{check_request, Completion, LlmProvider, ProviderError, ProviderSource};

/// One canned response. Token counts are optional; absent counts are
/// estimated from the request and content lengths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureEntry {
    pub content: String,
    #[serde(default)]
    pub prompt_tokens: Option<u64>,
    #[serde(default)]
    pub completion_tokens: Option<u64>,
}

impl FixtureEntry {
    pub fn new(content: impl Into<String>) -> Self {
        Self {
            content: content.into(),
            prompt_tokens: None,
            completion_tokens: None,
        }
    }

    pub fn with_usage(content: impl Into<String>, prompt: u64, completion: u64) -> Self {
        Self {
            content: content.into(),
            prompt_tokens: Some(prompt),
            completion_tokens: Some(completion),
        }
    }

    fn respond(&self, request: &LlmRequest) -> LlmResponse {
        match (self.prompt_tokens, self.completion_tokens) {
            (Some(p), Some(c)) => LlmResponse::reported(self.content.clone(), TokenUsage::new(p, c)),
            _ => {
                let mut r = LlmResponse::estimated(request, self.content.clone());
                r.usage.prompt_tokens = self.prompt_tokens.unwrap_or(r.usage.prompt_tokens);
                r.usage.completion_tokens =
                    self.completion_tokens.unwrap_or(r.usage.completion_tokens);
                r
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapturedRequest {
    pub stage: LifecycleStage,
    pub ordinal: u64,
    pub request: LlmRequest,
}

/// Replays a fixed list of responses in order.
pub struct ScriptedProvider {
    stage: LifecycleStage,
    ordinal: u64,
    queue: VecDeque<FixtureEntry>,
    served: usize,
    log: Arc<Mutex<Vec<CapturedRequest>>>,
}

impl ScriptedProvider {
    pub fn new(stage: LifecycleStage, entries: Vec<FixtureEntry>) -> Self {
        Self {
            stage,
            ordinal: 0,
            queue: entries.into(),
            served: 0,
            log: Arc::default(),
        }
    }
}

impl LlmProvider for ScriptedProvider {
    fn complete(&mut self, request: &LlmRequest) -> Result<Completion, ProviderError> {
        check_request(request)?;
        self.log.lock().unwrap().push(CapturedRequest {
            stage: self.stage,
            ordinal: self.ordinal,
            request: request.clone(),
        });
        let entry = self
            .queue
            .pop_front()
            .ok_or(ProviderError::FixtureExhausted(self.served))?;
        self.served += 1;
        Ok(entry.respond(request).into())
    }
}

/// Per-stage fixtures. Every stage run gets its own cursor starting at the
/// first entry; all requests are captured for inspection.
#[derive(Clone, Default)]
pub struct ScriptedSource {
    fixtures: BTreeMap<LifecycleStage, Vec<FixtureEntry>>,
    log: Arc<Mutex<Vec<CapturedRequest>>>,
}

impl ScriptedSource {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fixture(mut self, stage: LifecycleStage, entries: Vec<FixtureEntry>) -> Self {
        self.fixtures.insert(stage, entries);
        self
    }

    /// Reads a fixture file: a JSON array of entries.
    pub fn load_fixture(path: &Path) -> anyhow::Result<Vec<FixtureEntry>> {
        let text = fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("reading fixture {}: {e}", path.display()))?;
        serde_json::from_str(&text)
            .map_err(|e| anyhow::anyhow!("parsing fixture {}: {e}", path.display()))
    }

    pub fn has_fixture(&self, stage: LifecycleStage) -> bool {
        self.fixtures.contains_key(&stage)
    }

    pub fn requests(&self) -> Vec<CapturedRequest> {
        self.log.lock().unwrap().clone()
    }

    pub fn requests_for(&self, stage: LifecycleStage) -> Vec<LlmRequest> {
        self.log
            .lock()
            .unwrap()
            .iter()
            .filter(|c| c.stage == stage)
            .map(|c| c.request.clone())
            .collect()
    }

    pub fn calls(&self, stage: LifecycleStage) -> usize {
        self.log.lock().unwrap().iter().filter(|c| c.stage == stage).count()
    }

    pub fn total_calls(&self) -> usize {
        self.log.lock().unwrap().len()
    }
}

impl ProviderSource for ScriptedSource {
    fn provider(
        &self,
        stage: LifecycleStage,
        ordinal: u64,
    ) -> Result<Box<dyn LlmProvider>, ProviderError> {
        let entries = self
            .fixtures
            .get(&stage)
            .ok_or(ProviderError::NoFixture(stage))?;
        Ok(Box::new(ScriptedProvider {
            stage,
            ordinal,
            queue: entries.iter().cloned().collect(),
            served: 0,
            log: Arc::clone(&self.log),
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(text: &str) -> LlmRequest {
        LlmRequest::new(None, text, "m", 0.0)
    }

    #[test]
    fn queue_order_then_exhausted() {
        let mut p = ScriptedProvider::new(
            LifecycleStage::ModelConversion,
            vec![FixtureEntry::new("r1"), FixtureEntry::new("r2")],
        );
        assert_eq!(p.complete(&req("a")).unwrap().response.content, "r1");
        assert_eq!(p.complete(&req("a")).unwrap().response.content, "r2");
        assert_eq!(
            p.complete(&req("a")).unwrap_err(),
            ProviderError::FixtureExhausted(2)
        );
    }

    #[test]
    fn reported_usage_wins_over_estimate() {
        let mut p = ScriptedProvider::new(
            LifecycleStage::DataProcessing,
            vec![
                FixtureEntry::with_usage("abc", 1000, 500),
                FixtureEntry::new("12345678"),
            ],
        );
        let r = p.complete(&req("123456789")).unwrap().response;
        assert_eq!(r.usage, TokenUsage::new(1000, 500));
        assert_eq!(r.usage_source, tinyforge_core::UsageSource::ProviderReported);
        let r = p.complete(&req("123456789")).unwrap().response;
        assert_eq!(r.usage, TokenUsage::new(3, 2));
        assert_eq!(r.usage_source, tinyforge_core::UsageSource::Estimated);
    }

    #[test]
    fn cursor_is_per_stage_run() {
        let src = ScriptedSource::new().with_fixture(
            LifecycleStage::SketchGeneration,
            vec![FixtureEntry::new("only")],
        );
        for ordinal in 0..3 {
            let mut p = src.provider(LifecycleStage::SketchGeneration, ordinal).unwrap();
            assert_eq!(p.complete(&req("x")).unwrap().response.content, "only");
        }
        assert_eq!(src.calls(LifecycleStage::SketchGeneration), 3);
        assert!(matches!(
            src.provider(LifecycleStage::DataProcessing, 0),
            Err(ProviderError::NoFixture(LifecycleStage::DataProcessing))
        ));
    }

    #[test]
    fn invalid_request_rejected() {
        let mut p = ScriptedProvider::new(LifecycleStage::DataProcessing, vec![FixtureEntry::new("r")]);
        assert!(matches!(
            p.complete(&req("")),
            Err(ProviderError::InvalidRequest(_))
        ));
    }

    #[test]
    fn fixture_file_format() {
        let entries: Vec<FixtureEntry> = serde_json::from_str(
            r#"[{"content": "a", "prompt_tokens": 10, "completion_tokens": 5}, {"content": "b"}]"#,
        )
        .unwrap();
        assert_eq!(entries[0], FixtureEntry::with_usage("a", 10, 5));
        assert_eq!(entries[1], FixtureEntry::new("b"));
        assert!(serde_json::from_str::<Vec<FixtureEntry>>(r#"[{"content": "a", "prompt_tokens": -1}]"#).is_err());
    }
}
