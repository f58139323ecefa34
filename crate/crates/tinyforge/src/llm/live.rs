use std::thread;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;
use tinyforge_core::{LifecycleStage, LlmRequest, LlmResponse, TokenUsage};

use super::{check_request, Completion, LlmProvider, ProviderError, ProviderSource};

pub const API_KEY_VAR: &str = "TINYFORGE_API_KEY";

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub request_timeout: Duration,
    /// Transport tries per completion. These never consume stage attempts.
    pub tries: u32,
    pub backoff_base: Duration,
}

impl LiveConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key: std::env::var(API_KEY_VAR).ok().filter(|k| !k.is_empty()),
            request_timeout: Duration::from_secs(120),
            tries: 3,
            backoff_base: Duration::from_secs(1),
        }
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: Option<i64>,
    completion_tokens: Option<i64>,
}

fn parse_body(request: &LlmRequest, body: &str) -> Result<LlmResponse, ProviderError> {
    let wire: WireResponse =
        serde_json::from_str(body).map_err(|e| ProviderError::BadResponse(e.to_string()))?;
    let content = wire
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| ProviderError::BadResponse("no choices[0].message.content".into()))?;
    match wire.usage {
        Some(WireUsage {
            prompt_tokens: Some(p),
            completion_tokens: Some(c),
        }) => {
            let usage = TokenUsage::from_signed(p, c)
                .map_err(|e| ProviderError::BadResponse(e.to_string()))?;
            Ok(LlmResponse::reported(content, usage))
        }
        _ => Ok(LlmResponse::estimated(request, content)),
    }
}

/// Chat-completion client over HTTP(S).
pub struct LiveProvider {
    config: LiveConfig,
    agent: ureq::Agent,
}

enum Fault {
    Transport(String),
    RateLimited,
    Fatal(ProviderError),
}

impl LiveProvider {
    pub fn new(config: LiveConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.request_timeout))
            .build()
            .into();
        Self { config, agent }
    }

    fn try_once(&self, request: &LlmRequest) -> Result<LlmResponse, Fault> {
        let body = json!({
            "model": request.model_name,
            "messages": request.messages,
            "temperature": request.temperature,
        });
        let mut call = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.config.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = call
            .send_json(&body)
            .map_err(|e| Fault::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Fault::Transport(e.to_string()))?;
        match status {
            200..=299 => parse_body(request, &text).map_err(Fault::Fatal),
            429 => Err(Fault::RateLimited),
            500..=599 => Err(Fault::Transport(format!("HTTP {status}"))),
            _ => Err(Fault::Fatal(ProviderError::Http {
                status,
                body: text.chars().take(500).collect(),
            })),
        }
    }
}

impl LlmProvider for LiveProvider {
    fn complete(&mut self, request: &LlmRequest) -> Result<Completion, ProviderError> {
        check_request(request)?;
        let tries = self.config.tries.max(1);
        let mut last = Fault::Transport("no attempt made".into());
        for i in 0..tries {
            if i > 0 {
                thread::sleep(self.config.backoff_base * 2u32.pow(i - 1));
            }
            match self.try_once(request) {
                Ok(r) => return Ok(r.into()),
                Err(Fault::Fatal(e)) => return Err(e),
                Err(f) => last = f,
            }
        }
        Err(match last {
            Fault::RateLimited => ProviderError::RateLimited,
            Fault::Transport(msg) => ProviderError::ProviderUnreachable(msg),
            Fault::Fatal(e) => e,
        })
    }
}

#[derive(Debug, Clone)]
pub struct LiveSource {
    config: LiveConfig,
}

impl LiveSource {
    pub fn new(config: LiveConfig) -> Self {
        Self { config }
    }
}

impl ProviderSource for LiveSource {
    fn provider(
        &self,
        _stage: LifecycleStage,
        _ordinal: u64,
    ) -> Result<Box<dyn LlmProvider>, ProviderError> {
        Ok(Box::new(LiveProvider::new(self.config.clone())))
    }
}
