//! Blocking JSON-over-HTTP plumbing shared by the embedding and chat
//! clients: retry with exponential backoff, a bound on in-flight requests
//! and an optional record/replay fixture directory.

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::ProviderError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// Sends one POST with a JSON body. Non-2xx statuses are returned as
/// responses, not errors; only connection-level failures are errors.
pub trait HttpTransport: Send + Sync {
    fn post(&self, url: &str, api_key: Option<&str>, body: &str) -> Result<HttpResponse, ProviderError>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self { agent }
    }
}

impl HttpTransport for UreqTransport {
    fn post(&self, url: &str, api_key: Option<&str>, body: &str) -> Result<HttpResponse, ProviderError> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send(body)
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn delay_for(&self, attempt: u32) -> Duration {
        self.base_delay.saturating_mul(1u32 << attempt.min(16))
    }
}

/// Counting semaphore for in-flight requests.
#[derive(Debug)]
pub struct InFlightLimiter {
    permits: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a>(&'a InFlightLimiter);

impl InFlightLimiter {
    pub fn new(max_in_flight: usize) -> Self {
        Self {
            permits: Mutex::new(max_in_flight.max(1)),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().expect("limiter poisoned");
        while *n == 0 {
            n = self.freed.wait(n).expect("limiter poisoned");
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().expect("limiter poisoned") += 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum FixtureMode {
    #[default]
    Off,
    /// Perform real requests and store each final response.
    Record(PathBuf),
    /// Serve responses from stored fixtures only; never touch the network.
    Replay(PathBuf),
}

#[derive(Debug, Clone)]
pub struct HttpEndpoint {
    pub url: String,
    pub api_key: Option<String>,
}

impl HttpEndpoint {
    pub fn new(url: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            url: url.into(),
            api_key,
        }
    }
}

/// Fixture file name for a request: SHA-256 of the URL and the serialized
/// body.
pub fn fixture_key(url: &str, body: &str) -> String {
    let mut h = Sha256::new();
    h.update(url.as_bytes());
    h.update(b"\n");
    h.update(body.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Clone)]
pub struct HttpClient {
    transport: Arc<dyn HttpTransport>,
    retry: RetryPolicy,
    limiter: Arc<InFlightLimiter>,
    fixtures: FixtureMode,
    network_calls: Arc<AtomicU64>,
}

impl HttpClient {
    pub fn new(transport: Arc<dyn HttpTransport>, max_in_flight: usize) -> Self {
        Self {
            transport,
            retry: RetryPolicy::default(),
            limiter: Arc::new(InFlightLimiter::new(max_in_flight)),
            fixtures: FixtureMode::Off,
            network_calls: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_fixtures(mut self, fixtures: FixtureMode) -> Self {
        self.fixtures = fixtures;
        self
    }

    /// Requests issued to the transport, counting retries.
    pub fn network_calls(&self) -> u64 {
        self.network_calls.load(Ordering::Relaxed)
    }

    fn send_with_retry(&self, endpoint: &HttpEndpoint, body: &str) -> Result<HttpResponse, ProviderError> {
        let mut attempt = 0;
        loop {
            let result = {
                let _permit = self.limiter.acquire();
                self.network_calls.fetch_add(1, Ordering::Relaxed);
                self.transport
                    .post(&endpoint.url, endpoint.api_key.as_deref(), body)
                    .and_then(classify)
            };
            match result {
                Err(e) if e.is_retryable() && attempt + 1 < self.retry.max_attempts => {
                    log::warn!("request to {} failed ({e}); retrying", endpoint.url);
                    std::thread::sleep(self.retry.delay_for(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    /// POSTs `body` and parses the 2xx response as JSON.
    pub fn post_json(&self, endpoint: &HttpEndpoint, body: &Value) -> Result<Value, ProviderError> {
        let body = serde_json::to_string(body).map_err(|e| ProviderError::Schema(e.to_string()))?;
        let response = match &self.fixtures {
            FixtureMode::Off => self.send_with_retry(endpoint, &body)?,
            FixtureMode::Replay(dir) => {
                let key = fixture_key(&endpoint.url, &body);
                let path = dir.join(format!("{key}.json"));
                let text = std::fs::read_to_string(&path)
                    .map_err(|_| ProviderError::MissingFixture(key.clone()))?;
                let stored: Value = serde_json::from_str(&text)
                    .map_err(|e| ProviderError::Schema(format!("fixture {key}: {e}")))?;
                let status = stored.get("status").and_then(Value::as_u64).unwrap_or(200) as u16;
                let body = match stored.get("response") {
                    Some(Value::String(s)) => s.clone(),
                    Some(other) => other.to_string(),
                    None => return Err(ProviderError::Schema(format!("fixture {key} has no response"))),
                };
                classify(HttpResponse { status, body })?
            }
            FixtureMode::Record(dir) => {
                let response = self.send_with_retry(endpoint, &body)?;
                let key = fixture_key(&endpoint.url, &body);
                std::fs::create_dir_all(dir)?;
                let request: Value = serde_json::from_str(&body).unwrap_or(Value::Null);
                let stored = json!({
                    "url": endpoint.url,
                    "request": request,
                    "status": response.status,
                    "response": response.body,
                });
                std::fs::write(
                    dir.join(format!("{key}.json")),
                    serde_json::to_string_pretty(&stored).expect("fixture serializes"),
                )?;
                response
            }
        };
        serde_json::from_str(&response.body)
            .map_err(|e| ProviderError::Schema(format!("response is not JSON: {e}")))
    }
}

fn classify(resp: HttpResponse) -> Result<HttpResponse, ProviderError> {
    match resp.status {
        200..=299 => Ok(resp),
        401 | 403 => Err(ProviderError::Auth {
            status: resp.status,
            message: resp.body,
        }),
        status => Err(ProviderError::Http {
            status,
            body: resp.body,
        }),
    }
}

/// Transport that replays a fixed script of responses, one per call, and
/// records the bodies it was sent. For tests and examples.
pub struct ScriptedTransport {
    script: Mutex<std::collections::VecDeque<Result<HttpResponse, String>>>,
    pub requests: Mutex<Vec<String>>,
}

impl ScriptedTransport {
    pub fn new(script: Vec<Result<HttpResponse, String>>) -> Self {
        Self {
            script: Mutex::new(script.into()),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn ok(body: impl Into<String>) -> Result<HttpResponse, String> {
        Ok(HttpResponse {
            status: 200,
            body: body.into(),
        })
    }

    pub fn status(status: u16, body: impl Into<String>) -> Result<HttpResponse, String> {
        Ok(HttpResponse {
            status,
            body: body.into(),
        })
    }
}

impl HttpTransport for ScriptedTransport {
    fn post(&self, _url: &str, _api_key: Option<&str>, body: &str) -> Result<HttpResponse, ProviderError> {
        self.requests.lock().unwrap().push(body.to_string());
        match self.script.lock().unwrap().pop_front() {
            Some(Ok(r)) => Ok(r),
            Some(Err(e)) => Err(ProviderError::Transport(e)),
            None => Err(ProviderError::Transport("script exhausted".into())),
        }
    }
}
