use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::CorpusError;

/// A GET against a PatentsView-style endpoint. `params` carry the JSON-encoded
/// `q` (criteria), `f` (fields) and `o` (options) arguments.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ApiRequest {
    pub endpoint: String,
    pub params: BTreeMap<String, String>,
}

impl ApiRequest {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            params: BTreeMap::new(),
        }
    }

    pub fn param(mut self, key: &str, value: impl Into<String>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    /// Stable key used to match recorded interactions.
    pub fn key(&self) -> String {
        let query: Vec<String> = self.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("GET {}?{}", self.endpoint, query.join("&"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiResponse {
    pub status: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry_after: Option<u64>,
    pub body: String,
}

#[derive(Debug, Error, Clone)]
#[error("transport failure: {0}")]
pub struct TransportError(pub String);

pub trait Transport: Send + Sync {
    fn execute(&self, request: &ApiRequest) -> Result<ApiResponse, TransportError>;

    /// Timestamp to stamp onto corpora built through this transport, when the
    /// transport replays a recording.
    fn recorded_at(&self) -> Option<DateTime<Utc>> {
        None
    }
}

/// Live HTTP transport.
pub struct HttpTransport {
    base_url: String,
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(base_url: impl Into<String>) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .user_agent(concat!("claimforge/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| TransportError(e.to_string()))?;
        Ok(Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            client,
        })
    }
}

impl Transport for HttpTransport {
    fn execute(&self, request: &ApiRequest) -> Result<ApiResponse, TransportError> {
        let url = format!("{}/{}", self.base_url, request.endpoint.trim_start_matches('/'));
        let resp = self
            .client
            .get(&url)
            .query(&request.params)
            .send()
            .map_err(|e| TransportError(e.to_string()))?;
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get(reqwest::header::RETRY_AFTER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse().ok());
        let body = resp.text().map_err(|e| TransportError(e.to_string()))?;
        Ok(ApiResponse {
            status,
            retry_after,
            body,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Interaction {
    request: ApiRequest,
    response: ApiResponse,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Recording {
    recorded_at: DateTime<Utc>,
    interactions: Vec<Interaction>,
}

/// Serves responses from a recording. Repeated requests for the same key walk
/// through the recorded responses in order and then keep returning the last.
pub struct ReplayTransport {
    recorded_at: DateTime<Utc>,
    responses: HashMap<String, Vec<ApiResponse>>,
    cursor: Mutex<HashMap<String, usize>>,
}

impl ReplayTransport {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let raw = fs::read_to_string(path)?;
        Self::from_json(&raw)
    }

    pub fn from_json(raw: &str) -> Result<Self, CorpusError> {
        let rec: Recording =
            serde_json::from_str(raw).map_err(|e| CorpusError::BadResponse(format!("fixture: {e}")))?;
        let mut responses: HashMap<String, Vec<ApiResponse>> = HashMap::new();
        for it in rec.interactions {
            responses.entry(it.request.key()).or_default().push(it.response);
        }
        Ok(Self {
            recorded_at: rec.recorded_at,
            responses,
            cursor: Mutex::new(HashMap::new()),
        })
    }
}

impl Transport for ReplayTransport {
    fn execute(&self, request: &ApiRequest) -> Result<ApiResponse, TransportError> {
        let key = request.key();
        let Some(list) = self.responses.get(&key) else {
            return Err(TransportError(format!("no recorded interaction for {key}")));
        };
        let mut cursor = self.cursor.lock().expect("replay cursor poisoned");
        let idx = cursor.entry(key).or_insert(0);
        let resp = list[(*idx).min(list.len() - 1)].clone();
        *idx += 1;
        Ok(resp)
    }

    fn recorded_at(&self) -> Option<DateTime<Utc>> {
        Some(self.recorded_at)
    }
}

/// Wraps another transport and keeps every interaction for later replay.
pub struct RecordingTransport<T> {
    inner: T,
    log: Mutex<Vec<Interaction>>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>, recorded_at: DateTime<Utc>) -> Result<(), CorpusError> {
        let mut interactions = self.log.lock().expect("recording poisoned").clone();
        // Concurrent fetches complete in arbitrary order.
        interactions.sort_by_key(|it| it.request.key());
        let rec = Recording {
            recorded_at,
            interactions,
        };
        let json = serde_json::to_string_pretty(&rec).map_err(|e| CorpusError::BadResponse(e.to_string()))?;
        fs::write(path, json)?;
        Ok(())
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn execute(&self, request: &ApiRequest) -> Result<ApiResponse, TransportError> {
        let response = self.inner.execute(request)?;
        self.log.lock().expect("recording poisoned").push(Interaction {
            request: request.clone(),
            response: response.clone(),
        });
        Ok(response)
    }
}

/// Token bucket shared by every request issued through a client.
pub struct RateLimiter {
    per_second: Option<f64>,
    burst: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn new(per_second: f64, burst: u32) -> Self {
        let burst = f64::from(burst.max(1));
        Self {
            per_second: Some(per_second),
            burst,
            state: Mutex::new((burst, Instant::now())),
        }
    }

    pub fn unlimited() -> Self {
        Self {
            per_second: None,
            burst: 1.0,
            state: Mutex::new((1.0, Instant::now())),
        }
    }

    pub fn acquire(&self) {
        let Some(rate) = self.per_second else { return };
        loop {
            let wait = {
                let mut state = self.state.lock().expect("rate limiter poisoned");
                let now = Instant::now();
                let refill = now.duration_since(state.1).as_secs_f64() * rate;
                state.0 = (state.0 + refill).min(self.burst);
                state.1 = now;
                if state.0 >= 1.0 {
                    state.0 -= 1.0;
                    return;
                }
                (1.0 - state.0) / rate
            };
            thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 5,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_retries: u32) -> Self {
        Self {
            max_retries,
            base_delay: Duration::ZERO,
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        self.base_delay.saturating_mul(1 << attempt.min(16))
    }
}

/// Endpoint paths relative to the API base.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoints {
    pub inventors: String,
    pub patents: String,
    /// Claim full-text endpoint; many deployments do not offer one.
    #[serde(default)]
    pub claims: Option<String>,
}

impl Default for Endpoints {
    fn default() -> Self {
        Self {
            inventors: "inventors/query".into(),
            patents: "patents/query".into(),
            claims: None,
        }
    }
}

/// Rate-limited, retrying client over any [`Transport`].
#[derive(Clone)]
pub struct ApiClient {
    pub endpoints: Endpoints,
    pub per_page: usize,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    transport: Arc<dyn Transport>,
    limiter: Arc<RateLimiter>,
}

impl ApiClient {
    pub fn new(transport: Arc<dyn Transport>) -> Self {
        Self {
            endpoints: Endpoints::default(),
            per_page: 25,
            max_in_flight: 4,
            retry: RetryPolicy::default(),
            transport,
            limiter: Arc::new(RateLimiter::new(1.0, 1)),
        }
    }

    pub fn with_rate_limiter(mut self, limiter: RateLimiter) -> Self {
        self.limiter = Arc::new(limiter);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_endpoints(mut self, endpoints: Endpoints) -> Self {
        self.endpoints = endpoints;
        self
    }

    pub fn recorded_at(&self) -> Option<DateTime<Utc>> {
        self.transport.recorded_at()
    }

    /// Issues `request`, retrying server errors and transport failures with
    /// exponential backoff and honouring `Retry-After` on 429.
    pub fn get(&self, request: &ApiRequest) -> Result<String, CorpusError> {
        let mut attempt = 0;
        loop {
            self.limiter.acquire();
            let last = attempt >= self.retry.max_retries;
            match self.transport.execute(request) {
                Ok(resp) if (200..300).contains(&resp.status) => return Ok(resp.body),
                Ok(resp) if resp.status == 429 => {
                    if last {
                        return Err(CorpusError::RateLimited {
                            retry_after: resp.retry_after,
                        });
                    }
                    let wait = resp
                        .retry_after
                        .map(Duration::from_secs)
                        .unwrap_or_else(|| self.retry.backoff(attempt));
                    tracing::warn!(endpoint = %request.endpoint, ?wait, "rate limited");
                    thread::sleep(wait);
                }
                Ok(resp) if resp.status >= 500 => {
                    if last {
                        return Err(CorpusError::ApiUnavailable(format!(
                            "HTTP {} from {} after {} retries",
                            resp.status, request.endpoint, attempt
                        )));
                    }
                    thread::sleep(self.retry.backoff(attempt));
                }
                Ok(resp) => {
                    return Err(CorpusError::ApiUnavailable(format!(
                        "HTTP {} from {}",
                        resp.status, request.endpoint
                    )))
                }
                Err(e) => {
                    if last {
                        return Err(CorpusError::ApiUnavailable(format!("{e} after {attempt} retries")));
                    }
                    thread::sleep(self.retry.backoff(attempt));
                }
            }
            attempt += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Scripted {
        statuses: Vec<u16>,
        calls: AtomicUsize,
    }

    impl Transport for Scripted {
        fn execute(&self, _: &ApiRequest) -> Result<ApiResponse, TransportError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            let status = self.statuses[n.min(self.statuses.len() - 1)];
            Ok(ApiResponse {
                status,
                retry_after: (status == 429).then_some(0),
                body: "{}".into(),
            })
        }
    }

    fn client(statuses: Vec<u16>) -> (ApiClient, Arc<Scripted>) {
        let t = Arc::new(Scripted {
            statuses,
            calls: AtomicUsize::new(0),
        });
        let c = ApiClient::new(t.clone())
            .with_rate_limiter(RateLimiter::unlimited())
            .with_retry(RetryPolicy::immediate(5));
        (c, t)
    }

    #[test]
    fn server_errors_exhaust_retries() {
        let (c, t) = client(vec![500]);
        let err = c.get(&ApiRequest::new("x")).unwrap_err();
        assert!(matches!(err, CorpusError::ApiUnavailable(_)));
        assert_eq!(t.calls.load(Ordering::SeqCst), 6);
    }

    #[test]
    fn transient_error_recovers() {
        let (c, t) = client(vec![503, 502, 200]);
        assert_eq!(c.get(&ApiRequest::new("x")).unwrap(), "{}");
        assert_eq!(t.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn persistent_429_propagates_retry_after() {
        let (c, _) = client(vec![429]);
        let err = c.get(&ApiRequest::new("x")).unwrap_err();
        assert!(matches!(err, CorpusError::RateLimited { retry_after: Some(0) }));
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (c, t) = client(vec![404]);
        assert!(c.get(&ApiRequest::new("x")).is_err());
        assert_eq!(t.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn rate_limiter_spaces_requests() {
        let limiter = RateLimiter::new(50.0, 1);
        let start = Instant::now();
        for _ in 0..4 {
            limiter.acquire();
        }
        // first token is free, three more need ~20ms each
        assert!(start.elapsed() >= Duration::from_millis(55));
    }

    #[test]
    fn replay_walks_recorded_sequence() {
        let json = r#"{"recorded_at":"2024-01-01T00:00:00Z","interactions":[
            {"request":{"endpoint":"a","params":{"q":"1"}},"response":{"status":500,"body":""}},
            {"request":{"endpoint":"a","params":{"q":"1"}},"response":{"status":200,"body":"ok"}}]}"#;
        let replay = ReplayTransport::from_json(json).unwrap();
        let req = ApiRequest::new("a").param("q", "1");
        assert_eq!(replay.execute(&req).unwrap().status, 500);
        assert_eq!(replay.execute(&req).unwrap().status, 200);
        assert_eq!(replay.execute(&req).unwrap().status, 200);
        assert!(replay.execute(&ApiRequest::new("b")).is_err());
    }
}
