//! Chat-completion request and response carriers.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::code::estimate_tokens;
use crate::pricing::TokenUsage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RequestError {
    #[error("request has no user message")]
    NoUserMessage,
    #[error("message {0} has empty content")]
    EmptyContent(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub messages: Vec<Message>,
    pub model_name: String,
    pub temperature: f32,
}

impl LlmRequest {
    /// A request with an optional system message followed by one user turn.
    pub fn new(
        system: Option<&str>,
        user: impl Into<String>,
        model_name: impl Into<String>,
        temperature: f32,
    ) -> Self {
        let mut messages = vec![];
        if let Some(sys) = system.filter(|s| !s.is_empty()) {
            messages.push(Message {
                role: Role::System,
                content: sys.into(),
            });
        }
        messages.push(Message {
            role: Role::User,
            content: user.into(),
        });
        Self {
            messages,
            model_name: model_name.into(),
            temperature,
        }
    }

    pub fn validate(&self) -> Result<(), RequestError> {
        if !self.messages.iter().any(|m| m.role == Role::User) {
            return Err(RequestError::NoUserMessage);
        }
        match self.messages.iter().position(|m| m.content.is_empty()) {
            Some(i) => Err(RequestError::EmptyContent(i)),
            None => Ok(()),
        }
    }

    /// Estimated prompt tokens across all messages.
    pub fn estimated_tokens(&self) -> u64 {
        self.messages.iter().map(|m| estimate_tokens(&m.content)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UsageSource {
    ProviderReported,
    Estimated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub content: String,
    pub usage: TokenUsage,
    pub usage_source: UsageSource,
}

impl LlmResponse {
    pub fn reported(content: impl Into<String>, usage: TokenUsage) -> Self {
        Self {
            content: content.into(),
            usage,
            usage_source: UsageSource::ProviderReported,
        }
    }

    /// Builds a response whose usage is estimated from the request and
    /// content lengths, for providers that do not report counts.
    pub fn estimated(request: &LlmRequest, content: impl Into<String>) -> Self {
        let content = content.into();
        let usage = TokenUsage::new(request.estimated_tokens(), estimate_tokens(&content));
        Self {
            content,
            usage,
            usage_source: UsageSource::Estimated,
        }
    }
}
