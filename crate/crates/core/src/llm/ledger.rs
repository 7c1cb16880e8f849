use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatResponse, Provenance};

/// Counters for one stage (or the run total).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageUsage {
    pub calls: u64,
    /// Transport attempts, including retried ones. Never metered as calls.
    pub attempts: u64,
    pub failed_calls: u64,
    pub replayed: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
    /// Calls whose token counts are estimates.
    pub estimated: u64,
}

impl StageUsage {
    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    fn add_response(&mut self, response: &ChatResponse) {
        self.calls += 1;
        self.attempts += u64::from(response.attempts);
        if response.provenance == Provenance::Replay {
            self.replayed += 1;
        }
        self.prompt_tokens += response.prompt_tokens;
        self.completion_tokens += response.completion_tokens;
        self.latency_ms += response.latency.as_millis() as u64;
        if response.usage_estimated {
            self.estimated += 1;
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageSnapshot {
    pub stages: BTreeMap<String, StageUsage>,
    pub total: StageUsage,
}

impl UsageSnapshot {
    /// Recompute the total from the per-stage entries.
    pub fn summed_stages(&self) -> StageUsage {
        let mut sum = StageUsage::default();
        for s in self.stages.values() {
            sum.calls += s.calls;
            sum.attempts += s.attempts;
            sum.failed_calls += s.failed_calls;
            sum.replayed += s.replayed;
            sum.prompt_tokens += s.prompt_tokens;
            sum.completion_tokens += s.completion_tokens;
            sum.latency_ms += s.latency_ms;
            sum.estimated += s.estimated;
        }
        sum
    }
}

/// Run-wide usage accounting shared by all workers. Each update touches the
/// stage entry and the total under one lock.
#[derive(Debug, Default)]
pub struct UsageLedger {
    inner: Mutex<UsageSnapshot>,
}

impl UsageLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, stage: &str, response: &ChatResponse) {
        let mut inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        inner
            .stages
            .entry(stage.to_string())
            .or_default()
            .add_response(response);
        inner.total.add_response(response);
    }

    pub fn record_failure(&self, stage: &str, attempts: u32) {
        let mut inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        let entry = inner.stages.entry(stage.to_string()).or_default();
        entry.attempts += u64::from(attempts);
        entry.failed_calls += 1;
        inner.total.attempts += u64::from(attempts);
        inner.total.failed_calls += 1;
    }

    pub fn snapshot(&self) -> UsageSnapshot {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}
