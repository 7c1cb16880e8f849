use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::cache::{CachedEntry, CachedResponse, ReplayCache};
use super::ledger::UsageLedger;
use super::{cache_key, estimate_tokens, ChatRequest, ChatResponse, LlmError, Provenance};

/// Raw result of one transport attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendReply {
    pub content: String,
    /// `(prompt_tokens, completion_tokens)` when the endpoint reports usage.
    pub usage: Option<(u64, u64)>,
}

impl BackendReply {
    pub fn text(content: impl Into<String>) -> Self {
        BackendReply {
            content: content.into(),
            usage: None,
        }
    }
}

/// Something that can answer a chat request.
pub trait ChatBackend: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<BackendReply, LlmError>;
}

impl<F> ChatBackend for F
where
    F: Fn(&ChatRequest) -> Result<BackendReply, LlmError> + Send + Sync,
{
    fn send(&self, request: &ChatRequest) -> Result<BackendReply, LlmError> {
        self(request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplayMode {
    /// Always call the endpoint; the cache is neither read nor written.
    Off,
    /// Serve hits from the cache, call and store on a miss.
    #[default]
    Record,
    /// Serve only from the cache; a miss is an error.
    Strict,
}

impl FromStr for ReplayMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "off" => Ok(ReplayMode::Off),
            "record" => Ok(ReplayMode::Record),
            "strict" => Ok(ReplayMode::Strict),
            other => Err(format!("unknown replay mode `{other}` (off, record, strict)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub initial_delay_ms: u64,
    pub max_delay_ms: u64,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            initial_delay_ms: 500,
            max_delay_ms: 8_000,
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy {
            max_retries: 0,
            ..Self::default()
        }
    }

    /// Backoff before retry number `retry` (0-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let ms = self.initial_delay_ms as f64 * self.multiplier.powi(retry as i32);
        Duration::from_millis(ms.min(self.max_delay_ms as f64) as u64)
    }
}

/// Entry point for every model call: replay lookup, live call with retries,
/// recording and metering.
pub struct LlmGateway {
    backend: Option<Arc<dyn ChatBackend>>,
    cache: Option<ReplayCache>,
    mode: ReplayMode,
    retry: RetryPolicy,
    ledger: Arc<UsageLedger>,
    sleep: fn(Duration),
}

impl LlmGateway {
    pub fn new(backend: Option<Arc<dyn ChatBackend>>, cache: Option<ReplayCache>, mode: ReplayMode) -> Self {
        LlmGateway {
            backend,
            cache,
            mode,
            retry: RetryPolicy::default(),
            ledger: Arc::new(UsageLedger::new()),
            sleep: std::thread::sleep,
        }
    }

    /// Live backend, no cache.
    pub fn live(backend: Arc<dyn ChatBackend>) -> Self {
        Self::new(Some(backend), None, ReplayMode::Off)
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_ledger(mut self, ledger: Arc<UsageLedger>) -> Self {
        self.ledger = ledger;
        self
    }

    /// Replace the backoff sleeper (tests use a no-op).
    pub fn with_sleeper(mut self, sleep: fn(Duration)) -> Self {
        self.sleep = sleep;
        self
    }

    pub fn ledger(&self) -> &Arc<UsageLedger> {
        &self.ledger
    }

    pub fn mode(&self) -> ReplayMode {
        self.mode
    }

    /// Answer `request`, metering it under `stage`.
    pub fn complete(&self, stage: &str, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let key = cache_key(request);
        if self.mode != ReplayMode::Off {
            if let Some(cache) = &self.cache {
                if let Some(entry) = cache.get(&key)? {
                    let response = ChatResponse {
                        content: entry.response.content,
                        prompt_tokens: entry.response.prompt_tokens,
                        completion_tokens: entry.response.completion_tokens,
                        latency: Duration::from_millis(entry.response.latency_ms),
                        provenance: Provenance::Replay,
                        usage_estimated: entry.response.usage_estimated,
                        attempts: 1,
                    };
                    self.ledger.record(stage, &response);
                    return Ok(response);
                }
            }
            if self.mode == ReplayMode::Strict {
                return Err(LlmError::ReplayMiss { key });
            }
        }
        let backend = self.backend.as_ref().ok_or(LlmError::NotConfigured)?;

        let mut attempts = 0u32;
        let (reply, latency) = loop {
            attempts += 1;
            let started = Instant::now();
            match backend.send(request) {
                Ok(reply) => break (reply, started.elapsed()),
                Err(err) if err.is_transient() && attempts <= self.retry.max_retries => {
                    log::warn!("{stage}: attempt {attempts} failed ({err}); retrying");
                    (self.sleep)(self.retry.delay(attempts - 1));
                }
                Err(err) => {
                    self.ledger.record_failure(stage, attempts);
                    return Err(with_attempts(err, attempts));
                }
            }
        };

        let (prompt_tokens, completion_tokens, usage_estimated) = match reply.usage {
            Some((p, c)) => (p, c, false),
            None => {
                let prompt: u64 = request.messages.iter().map(|m| estimate_tokens(&m.content)).sum();
                (prompt, estimate_tokens(&reply.content), true)
            }
        };
        // Millisecond resolution, so a replay reproduces exactly what was metered.
        let latency = Duration::from_millis(latency.as_millis() as u64);
        let response = ChatResponse {
            content: reply.content,
            prompt_tokens,
            completion_tokens,
            latency,
            provenance: Provenance::Live,
            usage_estimated,
            attempts,
        };
        if self.mode == ReplayMode::Record {
            if let Some(cache) = &self.cache {
                cache.put(&CachedEntry {
                    key,
                    request: request.clone(),
                    response: CachedResponse {
                        content: response.content.clone(),
                        prompt_tokens,
                        completion_tokens,
                        latency_ms: latency.as_millis() as u64,
                        usage_estimated,
                    },
                })?;
            }
        }
        self.ledger.record(stage, &response);
        Ok(response)
    }
}

fn with_attempts(err: LlmError, attempts: u32) -> LlmError {
    match err {
        LlmError::RateLimited { .. } => LlmError::RateLimited { attempts },
        LlmError::Timeout { .. } => LlmError::Timeout { attempts },
        other => other,
    }
}
