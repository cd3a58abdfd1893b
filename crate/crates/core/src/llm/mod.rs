//! Provider-agnostic access to chat-completion models.
//!
//! - [`Gateway`] wraps a [`Transport`] with credential resolution, a per-provider
//!   concurrency cap and retry with exponential backoff
//! - [`MockProvider`] replays scripted responses keyed by (paper, dimension, run)
//! - [`HttpTransport`] speaks the chat-completion HTTP contract (feature `http`)
//! - [`parse`] holds the strict response parsers for each answer mode

mod mock;
pub mod parse;

#[cfg(feature = "http")]
mod http;

use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use mock::{MockEntry, MockProvider};
pub use parse::{parse_binary, parse_labeled_multi, parse_response, parse_subclass_list, ParseError};

#[cfg(feature = "http")]
pub use http::HttpTransport;

fn default_max_concurrent() -> usize {
    4
}
fn default_timeout_ms() -> u64 {
    60_000
}
fn default_max_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}

/// Connection settings for one provider. Holds the *name* of the environment
/// variable carrying the key, never the key itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub provider_id: String,
    #[serde(default)]
    pub endpoint: String,
    pub model_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credential_ref: Option<String>,
    #[serde(default = "default_max_concurrent")]
    pub max_concurrent: usize,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub temperature: f64,
    /// First backoff delay; doubles on every retry.
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
}

impl ProviderConfig {
    /// Settings for the scripted mock provider.
    pub fn mock(model_name: &str) -> Self {
        Self {
            provider_id: "mock".into(),
            endpoint: String::new(),
            model_name: model_name.into(),
            credential_ref: None,
            max_concurrent: default_max_concurrent(),
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            temperature: 0.0,
            backoff_base_ms: default_backoff_ms(),
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }
}

/// Identifies the classification item a request belongs to. Real providers
/// ignore it; the mock provider keys its script on it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RequestContext {
    pub paper_id: String,
    pub dimension_id: String,
    pub run_index: u32,
}

pub struct ChatRequest<'a> {
    pub model: &'a str,
    pub prompt: &'a str,
    pub temperature: f64,
    pub timeout: Duration,
    pub api_key: Option<&'a str>,
    pub context: &'a RequestContext,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransportError {
    #[error("provider returned HTTP {code}")]
    Status { code: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connection(String),
    #[error("malformed provider payload: {0}")]
    Malformed(String),
    #[error("no scripted response for {0}")]
    NoScript(String),
}

impl TransportError {
    fn is_transient(&self) -> bool {
        match self {
            TransportError::Status { code, .. } => *code == 429 || *code >= 500,
            TransportError::Timeout | TransportError::Connection(_) => true,
            TransportError::Malformed(_) | TransportError::NoScript(_) => false,
        }
    }
}

/// Sends one chat request and returns the completion text verbatim.
pub trait Transport: Send + Sync {
    fn send(&self, request: &ChatRequest<'_>) -> Result<String, TransportError>;
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn send(&self, request: &ChatRequest<'_>) -> Result<String, TransportError> {
        (**self).send(request)
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, duration: Duration);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

/// Records requested delays instead of sleeping.
#[derive(Debug, Default)]
pub struct RecordingSleeper {
    pub delays: Mutex<Vec<Duration>>,
}

impl Sleeper for RecordingSleeper {
    fn sleep(&self, duration: Duration) {
        self.delays.lock().expect("sleeper lock").push(duration);
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("credential variable `{0}` is not set")]
    MissingCredential(String),
    #[error("authentication rejected (HTTP {0})")]
    Auth(u16),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("malformed provider payload: {0}")]
    Malformed(String),
    #[error("request failed after {attempts} attempts: {source}")]
    Failed {
        attempts: u32,
        #[source]
        source: TransportError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawResponse {
    pub text: String,
    pub provider_id: String,
    pub model_name: String,
    pub latency_ms: u64,
    pub request_fingerprint: String,
}

/// Hex SHA-256 of (prompt, model, temperature).
pub fn request_fingerprint(prompt: &str, model: &str, temperature: f64) -> String {
    let mut hasher = Sha256::new();
    hasher.update(prompt.as_bytes());
    hasher.update([0u8]);
    hasher.update(model.as_bytes());
    hasher.update([0u8]);
    hasher.update(temperature.to_bits().to_le_bytes());
    hex::encode(hasher.finalize())
}

struct Permits {
    available: Mutex<usize>,
    freed: Condvar,
}

impl Permits {
    fn new(n: usize) -> Self {
        Self {
            available: Mutex::new(n.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> PermitGuard<'_> {
        let mut n = self.available.lock().expect("permit lock");
        while *n == 0 {
            n = self.freed.wait(n).expect("permit lock");
        }
        *n -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().expect("permit lock") += 1;
        self.0.freed.notify_one();
    }
}

/// Retrying, concurrency-capped access to one provider. Safe to share between
/// threads.
pub struct Gateway {
    config: ProviderConfig,
    transport: Arc<dyn Transport>,
    sleeper: Arc<dyn Sleeper>,
    permits: Permits,
}

impl Gateway {
    pub fn new(config: ProviderConfig, transport: Arc<dyn Transport>) -> Self {
        let permits = Permits::new(config.max_concurrent);
        Self {
            config,
            transport,
            sleeper: Arc::new(ThreadSleeper),
            permits,
        }
    }

    pub fn with_sleeper(mut self, sleeper: Arc<dyn Sleeper>) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn model_name(&self) -> &str {
        &self.config.model_name
    }

    fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u64 << retry.min(16);
        Duration::from_millis(self.config.backoff_base_ms.saturating_mul(factor)).min(Duration::from_secs(60))
    }

    pub fn complete(&self, prompt: &str, context: &RequestContext) -> Result<RawResponse, GatewayError> {
        if prompt.trim().is_empty() {
            return Err(GatewayError::EmptyPrompt);
        }
        let api_key = match &self.config.credential_ref {
            Some(var) => Some(std::env::var(var).map_err(|_| GatewayError::MissingCredential(var.clone()))?),
            None => None,
        };
        let request = ChatRequest {
            model: &self.config.model_name,
            prompt,
            temperature: self.config.temperature,
            timeout: self.config.timeout(),
            api_key: api_key.as_deref(),
            context,
        };

        let _permit = self.permits.acquire();
        let started = Instant::now();
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.transport.send(&request) {
                Ok(text) => {
                    return Ok(RawResponse {
                        text,
                        provider_id: self.config.provider_id.clone(),
                        model_name: self.config.model_name.clone(),
                        latency_ms: started.elapsed().as_millis() as u64,
                        request_fingerprint: request_fingerprint(prompt, &self.config.model_name, self.config.temperature),
                    });
                }
                Err(TransportError::Status { code: code @ (401 | 403), .. }) => return Err(GatewayError::Auth(code)),
                Err(TransportError::Malformed(msg)) => return Err(GatewayError::Malformed(msg)),
                Err(err) if err.is_transient() && attempts <= self.config.max_retries => {
                    self.sleeper.sleep(self.backoff(attempts - 1));
                }
                Err(TransportError::Status { code: 429, .. }) => return Err(GatewayError::RateLimited { attempts }),
                Err(TransportError::Timeout) => return Err(GatewayError::Timeout { attempts }),
                Err(source) => return Err(GatewayError::Failed { attempts, source }),
            }
        }
    }
}

/// Picks the transport for a provider: the scripted mock for provider id
/// `mock` (which needs a script), the chat-completion client otherwise.
pub fn transport_for(config: &ProviderConfig, mock_script: Option<&std::path::Path>) -> Result<Arc<dyn Transport>, String> {
    if config.provider_id == "mock" {
        let path = mock_script.ok_or("provider `mock` needs a mock script")?;
        return Ok(Arc::new(MockProvider::from_file(path)?));
    }
    #[cfg(feature = "http")]
    {
        if config.endpoint.is_empty() {
            return Err(format!("provider `{}` has no endpoint", config.provider_id));
        }
        Ok(Arc::new(HttpTransport::new(config.endpoint.clone())))
    }
    #[cfg(not(feature = "http"))]
    Err(format!("provider `{}` needs the `http` feature", config.provider_id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Scripted {
        outcomes: Mutex<Vec<Result<String, TransportError>>>,
        calls: AtomicUsize,
    }

    impl Scripted {
        fn new(mut outcomes: Vec<Result<String, TransportError>>) -> Arc<Self> {
            outcomes.reverse();
            Arc::new(Self {
                outcomes: Mutex::new(outcomes),
                calls: AtomicUsize::new(0),
            })
        }
    }

    impl Transport for Scripted {
        fn send(&self, _: &ChatRequest<'_>) -> Result<String, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.outcomes.lock().unwrap().pop().expect("script exhausted")
        }
    }

    fn status(code: u16) -> Result<String, TransportError> {
        Err(TransportError::Status { code, body: String::new() })
    }

    fn ctx() -> RequestContext {
        RequestContext {
            paper_id: "P7".into(),
            dimension_id: "pricing_model".into(),
            run_index: 1,
        }
    }

    fn gateway(transport: Arc<Scripted>, retries: u32, sleeper: Arc<RecordingSleeper>) -> Gateway {
        let mut cfg = ProviderConfig::mock("m");
        cfg.max_retries = retries;
        cfg.backoff_base_ms = 100;
        Gateway::new(cfg, transport).with_sleeper(sleeper)
    }

    #[test]
    fn rate_limit_exhausts_retries() {
        let t = Scripted::new(vec![status(429), status(429), status(429)]);
        let sleeper = Arc::new(RecordingSleeper::default());
        let gw = gateway(t.clone(), 2, sleeper.clone());
        assert_eq!(gw.complete("p", &ctx()), Err(GatewayError::RateLimited { attempts: 3 }));
        assert_eq!(t.calls.load(Ordering::SeqCst), 3);
        let delays = sleeper.delays.lock().unwrap().clone();
        assert_eq!(delays, vec![Duration::from_millis(100), Duration::from_millis(200)]);
    }

    #[test]
    fn transient_failure_then_success() {
        let t = Scripted::new(vec![status(503), Err(TransportError::Timeout), Ok("Yes".into())]);
        let gw = gateway(t.clone(), 2, Arc::new(RecordingSleeper::default()));
        let resp = gw.complete("prompt", &ctx()).unwrap();
        assert_eq!(resp.text, "Yes");
        assert_eq!(resp.request_fingerprint, request_fingerprint("prompt", "m", 0.0));
    }

    #[test]
    fn auth_is_not_retried() {
        let t = Scripted::new(vec![status(401)]);
        let gw = gateway(t.clone(), 5, Arc::new(RecordingSleeper::default()));
        assert_eq!(gw.complete("p", &ctx()), Err(GatewayError::Auth(401)));
        assert_eq!(t.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn empty_prompt_is_rejected_before_sending() {
        let t = Scripted::new(vec![]);
        let gw = gateway(t.clone(), 0, Arc::new(RecordingSleeper::default()));
        assert_eq!(gw.complete("  ", &ctx()), Err(GatewayError::EmptyPrompt));
        assert_eq!(t.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn missing_credential_variable() {
        let t = Scripted::new(vec![]);
        let mut cfg = ProviderConfig::mock("m");
        cfg.credential_ref = Some("SLR_TEST_SURELY_UNSET_KEY".into());
        let gw = Gateway::new(cfg, t);
        assert_eq!(
            gw.complete("p", &ctx()),
            Err(GatewayError::MissingCredential("SLR_TEST_SURELY_UNSET_KEY".into()))
        );
    }

    #[test]
    fn config_never_serializes_a_key() {
        let mut cfg = ProviderConfig::mock("m");
        cfg.credential_ref = Some("OPENAI_API_KEY".into());
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains("OPENAI_API_KEY"));
        assert!(!json.contains("sk-"));
    }

    #[test]
    fn fingerprint_depends_on_all_inputs() {
        let a = request_fingerprint("p", "m", 0.0);
        assert_eq!(a, request_fingerprint("p", "m", 0.0));
        assert_ne!(a, request_fingerprint("p", "m", 0.5));
        assert_ne!(a, request_fingerprint("p", "n", 0.0));
        assert_ne!(a, request_fingerprint("q", "m", 0.0));
    }
}
