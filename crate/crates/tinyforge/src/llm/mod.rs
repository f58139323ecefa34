//! Chat-completion providers.
//!
//! Three implementations share one contract: [`live::LiveProvider`] talks to
//! an HTTP endpoint, [`scripted::ScriptedSource`] replays fixture files and
//! [`stochastic::StochasticSource`] derives pass/fail responses from a seed.

use std::time::Duration;

use tinyforge_core::{LifecycleStage, LlmRequest, LlmResponse};

pub mod live;
pub mod scripted;
pub mod stochastic;

pub use live::{LiveConfig, LiveProvider, LiveSource};
pub use scripted::{FixtureEntry, ScriptedProvider, ScriptedSource};
pub use stochastic::{StochasticConfig, StochasticProvider, StochasticSource};

#[derive(Debug, Clone)]
pub struct Completion {
    pub response: LlmResponse,
    /// Model latency to charge to a simulated clock. Real providers leave
    /// this unset because the wall clock already observed it.
    pub simulated_latency: Option<Duration>,
}

impl From<LlmResponse> for Completion {
    fn from(response: LlmResponse) -> Self {
        Self {
            response,
            simulated_latency: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    #[error("provider unreachable: {0}")]
    ProviderUnreachable(String),
    #[error("fixture exhausted after {0} responses")]
    FixtureExhausted(usize),
    #[error("rate limited by provider")]
    RateLimited,
    #[error("provider returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    BadResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no fixture configured for stage {0}")]
    NoFixture(LifecycleStage),
}

pub trait LlmProvider: Send {
    fn complete(&mut self, request: &LlmRequest) -> Result<Completion, ProviderError>;
}

/// Hands out a fresh provider per stage run.
///
/// `ordinal` numbers independent runs within a bench so that seeded
/// providers stay reproducible whatever order the runs execute in.
pub trait ProviderSource: Send + Sync {
    fn provider(
        &self,
        stage: LifecycleStage,
        ordinal: u64,
    ) -> Result<Box<dyn LlmProvider>, ProviderError>;
}

fn check_request(request: &LlmRequest) -> Result<(), ProviderError> {
    request
        .validate()
        .map_err(|e| ProviderError::InvalidRequest(e.to_string()))
}
