use std::sync::atomic::{AtomicI64, Ordering};
use std::time::Duration;

use serde::Deserialize;
use tinyforge_core::Timestamp;

/// Time source for stage timing.
pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;

    /// Moves simulated time forward; wall clocks ignore this.
    fn advance(&self, _by: Duration) {}
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        Timestamp::from_millis(chrono::Utc::now().timestamp_millis())
    }
}

/// Virtual time that only moves when told to.
///
/// Used with the seeded stochastic provider so that durations come from the
/// provider's simulated latency and repeated benches print identical stats.
#[derive(Debug)]
pub struct SimulatedClock {
    now_ms: AtomicI64,
}

/// 2024-01-01T00:00:00Z
pub const SIMULATED_EPOCH_MS: i64 = 1_704_067_200_000;

impl SimulatedClock {
    pub fn new(start: Timestamp) -> Self {
        Self {
            now_ms: AtomicI64::new(start.as_millis()),
        }
    }
}

impl Default for SimulatedClock {
    fn default() -> Self {
        Self::new(Timestamp::from_millis(SIMULATED_EPOCH_MS))
    }
}

impl Clock for SimulatedClock {
    fn now(&self) -> Timestamp {
        Timestamp::from_millis(self.now_ms.load(Ordering::SeqCst))
    }

    fn advance(&self, by: Duration) {
        self.now_ms
            .fetch_add(by.as_millis() as i64, Ordering::SeqCst);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    #[default]
    Wall,
    Simulated,
}

impl ClockMode {
    /// A fresh clock for one run.
    pub fn start(self) -> Box<dyn Clock> {
        match self {
            ClockMode::Wall => Box::new(SystemClock),
            ClockMode::Simulated => Box::new(SimulatedClock::default()),
        }
    }
}
