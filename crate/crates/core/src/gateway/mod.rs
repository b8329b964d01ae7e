//! Client contract for chat-completion, token-logprob and extractive-QA
//! endpoints.
//!
//! [`Gateway`] wraps an [`Endpoint`] transport with a content-addressed
//! cache, bounded retries and an optional shared rate limiter. Endpoint URLs
//! with the `mock:` scheme select the in-tree [`MockEndpoint`]; `http(s)://`
//! URLs select the HTTP transport (feature `http`).

mod cache;
#[cfg(feature = "http")]
mod http;
mod mock;
mod rate;
mod retry;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use cache::ResponseCache;
#[cfg(feature = "http")]
pub use http::HttpEndpoint;
pub use mock::{stop as stop_response, MockEndpoint};
pub use rate::RateLimiter;
pub use retry::RetryPolicy;

use crate::prompt::Prompt;
use crate::util::sha256_hex;

/// Sampling parameters for context generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_output_tokens: u32,
}

impl Default for SamplingParams {
    /// Nucleus sampling with p = 1 at temperature 0.9; 512 output tokens.
    fn default() -> Self {
        SamplingParams {
            temperature: 0.9,
            top_p: 1.0,
            max_output_tokens: 512,
        }
    }
}

/// One chat message on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireMessage {
    pub role: String,
    pub content: String,
}

/// Chat-completion request body, exactly as sent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatWireRequest {
    pub model: String,
    pub messages: Vec<WireMessage>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_name: String,
    pub prompt: Prompt,
    pub params: SamplingParams,
    pub request_key: String,
}

impl CompletionRequest {
    pub fn new(
        model_name: impl Into<String>,
        prompt: Prompt,
        params: SamplingParams,
    ) -> Result<Self, GatewayError> {
        let model_name = model_name.into();
        if !(params.temperature >= 0.0 && params.temperature.is_finite()) {
            return Err(GatewayError::InvalidArgument(format!(
                "temperature must be non-negative, got {}",
                params.temperature
            )));
        }
        if !(params.top_p > 0.0 && params.top_p <= 1.0) {
            return Err(GatewayError::InvalidArgument(format!(
                "top_p must lie in (0, 1], got {}",
                params.top_p
            )));
        }
        if params.max_output_tokens == 0 {
            return Err(GatewayError::InvalidArgument(
                "max_output_tokens must be positive".into(),
            ));
        }
        if prompt.messages.is_empty() {
            return Err(GatewayError::InvalidArgument(
                "prompt has no messages".into(),
            ));
        }
        let mut req = CompletionRequest {
            model_name,
            prompt,
            params,
            request_key: String::new(),
        };
        req.request_key = request_key(&req.wire_body());
        Ok(req)
    }

    pub fn wire_body(&self) -> ChatWireRequest {
        ChatWireRequest {
            model: self.model_name.clone(),
            messages: self
                .prompt
                .messages
                .iter()
                .map(|m| WireMessage {
                    role: m.role.as_str().to_string(),
                    content: m.content.clone(),
                })
                .collect(),
            temperature: self.params.temperature,
            top_p: self.params.top_p,
            max_tokens: self.params.max_output_tokens,
        }
    }
}

/// SHA-256 over the serialized wire body (fixed field order).
pub fn request_key(body: &ChatWireRequest) -> String {
    sha256_hex(serde_json::to_vec(body).expect("wire body serializes"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    #[serde(default)]
    pub usage: Usage,
    #[serde(default)]
    pub raw_provider_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprobs {
    pub tokens: Vec<String>,
    pub logprobs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAProbeResult {
    /// Substring of the context, or empty for "no answer".
    pub predicted_span: String,
    pub confidence: f64,
}

/// Failure reported by a transport, before retry handling.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EndpointError {
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("malformed provider payload: {0}")]
    Malformed(String),
    #[error("input of {tokens} tokens exceeds the {limit}-token context window")]
    ContextOverflow { tokens: usize, limit: usize },
    #[error("request rejected: {0}")]
    Rejected(String),
    #[error("operation not supported by this endpoint: {0}")]
    Unsupported(String),
}

impl EndpointError {
    fn retryable(&self) -> bool {
        matches!(
            self,
            EndpointError::Transient(_) | EndpointError::RateLimited(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("still rate limited after {attempts} attempts")]
    RateLimitExhausted { attempts: u32 },
    #[error("endpoint unavailable after {attempts} attempts: {last}")]
    Unavailable { attempts: u32, last: String },
    #[error("malformed provider payload: {0}")]
    Malformed(String),
    #[error("input of {tokens} tokens exceeds the {limit}-token context window")]
    ContextOverflow { tokens: usize, limit: usize },
    #[error("request rejected: {0}")]
    Rejected(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("cache: {0}")]
    Cache(String),
    #[error("configuration: {0}")]
    Config(String),
}

impl GatewayError {
    /// Short stable name, used in failure summaries.
    pub fn kind(&self) -> &'static str {
        match self {
            GatewayError::Auth(_) => "auth",
            GatewayError::RateLimitExhausted { .. } => "rate_limit",
            GatewayError::Unavailable { .. } => "unavailable",
            GatewayError::Malformed(_) => "malformed",
            GatewayError::ContextOverflow { .. } => "context_overflow",
            GatewayError::Rejected(_) => "rejected",
            GatewayError::Unsupported(_) => "unsupported",
            GatewayError::InvalidArgument(_) => "invalid_argument",
            GatewayError::Cache(_) => "cache",
            GatewayError::Config(_) => "config",
        }
    }
}

/// A transport to a model provider.
pub trait Endpoint: Send + Sync {
    fn chat(&self, request: &ChatWireRequest) -> Result<CompletionResponse, EndpointError>;
    fn token_logprobs(&self, model: &str, text: &str) -> Result<TokenLogprobs, EndpointError>;
    fn answer_question(
        &self,
        context: &str,
        question: &str,
    ) -> Result<QAProbeResult, EndpointError>;
    /// Credential-free description, e.g. the base URL.
    fn describe(&self) -> String;
}

/// Settings for building a [`Gateway`]. Credentials never live here; only
/// the name of the environment variable that holds them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub endpoint: String,
    #[serde(default)]
    pub qa_endpoint: Option<String>,
    pub api_key_env: String,
    pub retry: RetryPolicy,
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
    #[serde(default)]
    pub cache_dir: Option<std::path::PathBuf>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    120
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            endpoint: "mock:".into(),
            qa_endpoint: None,
            api_key_env: "OPENAI_API_KEY".into(),
            retry: RetryPolicy::default(),
            requests_per_minute: None,
            cache_dir: None,
            timeout_secs: default_timeout_secs(),
        }
    }
}

const KIND_CHAT: &str = "chat";
const KIND_LOGPROBS: &str = "logprobs";
const KIND_QA: &str = "qa";

pub struct Gateway {
    endpoint: Arc<dyn Endpoint>,
    cache: ResponseCache,
    retry: RetryPolicy,
    limiter: Option<Arc<RateLimiter>>,
    calls: AtomicUsize,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("endpoint", &self.endpoint.describe())
            .field("retry", &self.retry)
            .field("calls", &self.calls.load(Ordering::SeqCst))
            .finish()
    }
}

impl Gateway {
    pub fn new(endpoint: Arc<dyn Endpoint>, cache: ResponseCache, retry: RetryPolicy) -> Self {
        Gateway {
            endpoint,
            cache,
            retry,
            limiter: None,
            calls: AtomicUsize::new(0),
        }
    }

    /// Gateway over a mock endpoint with an in-memory cache and no backoff.
    pub fn mock(endpoint: MockEndpoint) -> Self {
        Gateway::new(
            Arc::new(endpoint),
            ResponseCache::in_memory(),
            RetryPolicy::immediate(2),
        )
    }

    pub fn with_rate_limiter(mut self, limiter: Arc<RateLimiter>) -> Self {
        self.limiter = Some(limiter);
        self
    }

    pub fn from_config(config: &GatewayConfig) -> Result<Self, GatewayError> {
        let endpoint: Arc<dyn Endpoint> = if config.endpoint.starts_with("mock:") {
            Arc::new(MockEndpoint::from_url(&config.endpoint).map_err(GatewayError::Config)?)
        } else if config.endpoint.starts_with("http://") || config.endpoint.starts_with("https://")
        {
            Self::http_endpoint(config)?
        } else {
            return Err(GatewayError::Config(format!(
                "unsupported endpoint URL {:?} (expected mock: or http(s)://)",
                config.endpoint
            )));
        };
        let cache = match &config.cache_dir {
            Some(dir) => ResponseCache::in_dir(dir),
            None => ResponseCache::in_memory(),
        };
        let mut gw = Gateway::new(endpoint, cache, config.retry.clone());
        if let Some(rpm) = config.requests_per_minute {
            gw = gw.with_rate_limiter(Arc::new(RateLimiter::per_minute(rpm)));
        }
        Ok(gw)
    }

    #[cfg(feature = "http")]
    fn http_endpoint(config: &GatewayConfig) -> Result<Arc<dyn Endpoint>, GatewayError> {
        let key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty());
        Ok(Arc::new(HttpEndpoint::new(
            &config.endpoint,
            config.qa_endpoint.as_deref(),
            key,
            std::time::Duration::from_secs(config.timeout_secs),
        )))
    }

    #[cfg(not(feature = "http"))]
    fn http_endpoint(_config: &GatewayConfig) -> Result<Arc<dyn Endpoint>, GatewayError> {
        Err(GatewayError::Config(
            "built without the http feature".into(),
        ))
    }

    /// Endpoint invocations so far, counting every retry attempt.
    pub fn network_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn describe(&self) -> String {
        self.endpoint.describe()
    }

    fn call_with_retries<T>(
        &self,
        mut op: impl FnMut() -> Result<T, EndpointError>,
    ) -> Result<T, GatewayError> {
        let attempts = self.retry.max_attempts();
        let mut last = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                let wait = self.retry.backoff(attempt - 1);
                if !wait.is_zero() {
                    std::thread::sleep(wait);
                }
            }
            if let Some(l) = &self.limiter {
                l.acquire();
            }
            self.calls.fetch_add(1, Ordering::SeqCst);
            match op() {
                Ok(v) => return Ok(v),
                Err(e) if e.retryable() => {
                    log::debug!("attempt {} of {attempts} failed: {e}", attempt + 1);
                    last = Some(e);
                }
                Err(e) => return Err(terminal(e)),
            }
        }
        Err(match last.expect("at least one attempt") {
            EndpointError::RateLimited(_) => GatewayError::RateLimitExhausted { attempts },
            e => GatewayError::Unavailable {
                attempts,
                last: e.to_string(),
            },
        })
    }

    fn cached<Q, T>(
        &self,
        kind: &str,
        key: &str,
        request: &Q,
        fetch: impl FnMut() -> Result<T, EndpointError>,
        check: impl Fn(&T) -> Result<(), GatewayError>,
    ) -> Result<T, GatewayError>
    where
        Q: Serialize,
        T: Serialize + serde::de::DeserializeOwned,
    {
        let lock = self.cache.lock_key(&format!("{kind}/{key}"));
        let _guard = lock.lock().expect("cache key lock poisoned");
        if let Some(hit) = self
            .cache
            .get::<T>(kind, key)
            .map_err(|e| GatewayError::Cache(e.to_string()))?
        {
            return Ok(hit);
        }
        let value = self.call_with_retries(fetch)?;
        check(&value)?;
        self.cache
            .put(kind, key, request, &value)
            .map_err(|e| GatewayError::Cache(e.to_string()))?;
        Ok(value)
    }

    pub fn complete(
        &self,
        request: &CompletionRequest,
    ) -> Result<CompletionResponse, GatewayError> {
        let body = request.wire_body();
        self.cached(
            KIND_CHAT,
            &request.request_key,
            &body,
            || self.endpoint.chat(&body),
            |r: &CompletionResponse| {
                if r.finish_reason == FinishReason::Stop && r.text.trim().is_empty() {
                    Err(GatewayError::Malformed(
                        "finish_reason stop with empty text".into(),
                    ))
                } else {
                    Ok(())
                }
            },
        )
    }

    pub fn token_logprobs(
        &self,
        text: &str,
        model_name: &str,
    ) -> Result<TokenLogprobs, GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::InvalidArgument(
                "text must not be empty".into(),
            ));
        }
        let request = serde_json::json!({ "model": model_name, "text": text });
        let key = sha256_hex(serde_json::to_vec(&request).expect("serializes"));
        self.cached(
            KIND_LOGPROBS,
            &key,
            &request,
            || self.endpoint.token_logprobs(model_name, text),
            |lp: &TokenLogprobs| {
                if lp.tokens.len() != lp.logprobs.len() {
                    return Err(GatewayError::Malformed(format!(
                        "{} tokens but {} logprobs",
                        lp.tokens.len(),
                        lp.logprobs.len()
                    )));
                }
                if lp.logprobs.iter().any(|&v| v.is_nan() || v > 0.0) {
                    return Err(GatewayError::Malformed("positive or NaN logprob".into()));
                }
                Ok(())
            },
        )
    }

    pub fn answer_question(
        &self,
        context: &str,
        question: &str,
    ) -> Result<QAProbeResult, GatewayError> {
        if context.trim().is_empty() || question.trim().is_empty() {
            return Err(GatewayError::InvalidArgument(
                "context and question must not be empty".into(),
            ));
        }
        let request = serde_json::json!({ "question": question, "context": context });
        let key = sha256_hex(serde_json::to_vec(&request).expect("serializes"));
        self.cached(
            KIND_QA,
            &key,
            &request,
            || self.endpoint.answer_question(context, question),
            |r: &QAProbeResult| {
                if !(0.0..=1.0).contains(&r.confidence) {
                    return Err(GatewayError::Malformed(format!(
                        "confidence {} outside [0, 1]",
                        r.confidence
                    )));
                }
                if !r.predicted_span.is_empty() && !context.contains(&r.predicted_span) {
                    return Err(GatewayError::Malformed(
                        "predicted span is not a substring of the context".into(),
                    ));
                }
                Ok(())
            },
        )
    }
}

fn terminal(e: EndpointError) -> GatewayError {
    match e {
        EndpointError::Auth(m) => GatewayError::Auth(m),
        EndpointError::Malformed(m) => GatewayError::Malformed(m),
        EndpointError::ContextOverflow { tokens, limit } => {
            GatewayError::ContextOverflow { tokens, limit }
        }
        EndpointError::Rejected(m) => GatewayError::Rejected(m),
        EndpointError::Unsupported(m) => GatewayError::Unsupported(m),
        EndpointError::Transient(m) | EndpointError::RateLimited(m) => GatewayError::Unavailable {
            attempts: 1,
            last: m,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::{Message, Role};
    use std::collections::HashSet;
    use std::sync::Mutex;

    fn prompt(text: &str) -> Prompt {
        Prompt {
            messages: vec![Message {
                role: Role::User,
                content: text.into(),
            }],
            resolved_placeholders: Default::default(),
        }
    }

    fn request(text: &str) -> CompletionRequest {
        CompletionRequest::new("gpt-3.5-turbo", prompt(text), SamplingParams::default()).unwrap()
    }

    #[test]
    fn sampling_defaults_reach_the_wire() {
        let body = serde_json::to_value(request("hi").wire_body()).unwrap();
        assert_eq!(body["temperature"], serde_json::json!(0.9));
        assert_eq!(body["top_p"], serde_json::json!(1.0));
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["max_tokens"], 512);
    }

    #[test]
    fn request_validation() {
        let bad = |t: f64, p: f64| {
            CompletionRequest::new(
                "m",
                prompt("x"),
                SamplingParams {
                    temperature: t,
                    top_p: p,
                    max_output_tokens: 5,
                },
            )
        };
        assert!(bad(-0.1, 1.0).is_err());
        assert!(bad(0.9, 0.0).is_err());
        assert!(bad(0.9, 1.1).is_err());
        assert!(bad(0.0, 1.0).is_ok());
    }

    #[test]
    fn request_key_is_stable_and_sensitive() {
        let a = request("hello");
        assert_eq!(a.request_key, request("hello").request_key);
        assert_ne!(a.request_key, request("hello!").request_key);
        assert_eq!(a.request_key, request_key(&a.wire_body()));
        assert_eq!(a.request_key.len(), 64);
    }

    #[test]
    fn request_keys_do_not_collide() {
        let mut seen = HashSet::new();
        for i in 0..100_000u32 {
            let body = ChatWireRequest {
                model: "m".into(),
                messages: vec![WireMessage {
                    role: "user".into(),
                    content: i.to_string(),
                }],
                temperature: 0.9,
                top_p: 1.0,
                max_tokens: 16,
            };
            assert!(seen.insert(request_key(&body)));
        }
    }

    #[test]
    fn second_identical_call_is_served_from_cache() {
        let gw = Gateway::mock(MockEndpoint::new());
        let r = request("question: Q?\nanswer: A");
        let first = gw.complete(&r).unwrap();
        assert_eq!(gw.network_calls(), 1);
        let second = gw.complete(&r).unwrap();
        assert_eq!(gw.network_calls(), 1);
        assert_eq!(first, second);
    }

    #[test]
    fn warm_and_cold_agree_across_restarts() {
        let dir = tempfile::tempdir().unwrap();
        let make = || {
            Gateway::new(
                Arc::new(MockEndpoint::new()),
                ResponseCache::in_dir(dir.path()),
                RetryPolicy::immediate(0),
            )
        };
        let cold = make();
        let r = request("question: Why?\nanswer: Because");
        let fresh = cold.complete(&r).unwrap();
        let warm = make();
        assert_eq!(warm.complete(&r).unwrap(), fresh);
        assert_eq!(warm.network_calls(), 0);
    }

    #[test]
    fn canned_mock_response() {
        let r = request("anything");
        let mock = MockEndpoint::new().with_canned([(r.request_key.clone(), "CTX".to_string())]);
        let resp = Gateway::mock(mock).complete(&r).unwrap();
        assert_eq!(resp.text, "CTX");
        assert_eq!(resp.finish_reason, FinishReason::Stop);
    }

    #[test]
    fn transient_failures_retry_up_to_the_cap() {
        let failures = Arc::new(Mutex::new(2));
        let f = failures.clone();
        let mock = MockEndpoint::new().with_chat(move |_| {
            let mut left = f.lock().unwrap();
            if *left > 0 {
                *left -= 1;
                Err(EndpointError::Transient("503".into()))
            } else {
                Ok(CompletionResponse {
                    text: "ok".into(),
                    finish_reason: FinishReason::Stop,
                    usage: Usage::default(),
                    raw_provider_id: None,
                })
            }
        });
        let gw = Gateway::new(
            Arc::new(mock),
            ResponseCache::disabled(),
            RetryPolicy::immediate(2),
        );
        assert_eq!(gw.complete(&request("x")).unwrap().text, "ok");
        assert_eq!(gw.network_calls(), 3);

        let always =
            MockEndpoint::new().with_chat(|_| Err(EndpointError::RateLimited("429".into())));
        let gw = Gateway::new(
            Arc::new(always),
            ResponseCache::disabled(),
            RetryPolicy::immediate(3),
        );
        assert_eq!(
            gw.complete(&request("x")),
            Err(GatewayError::RateLimitExhausted { attempts: 4 })
        );
        assert_eq!(gw.network_calls(), 4);
    }

    #[test]
    fn auth_and_malformed_are_not_retried() {
        let gw = Gateway::new(
            Arc::new(MockEndpoint::new().with_chat(|_| Err(EndpointError::Auth("401".into())))),
            ResponseCache::disabled(),
            RetryPolicy::immediate(5),
        );
        assert_eq!(gw.complete(&request("x")).unwrap_err().kind(), "auth");
        assert_eq!(gw.network_calls(), 1);

        let gw = Gateway::new(
            Arc::new(
                MockEndpoint::new()
                    .with_chat(|_| Err(EndpointError::Malformed("no choices".into()))),
            ),
            ResponseCache::disabled(),
            RetryPolicy::immediate(5),
        );
        assert_eq!(gw.complete(&request("x")).unwrap_err().kind(), "malformed");
        assert_eq!(gw.network_calls(), 1);
    }

    #[test]
    fn empty_stop_response_is_malformed() {
        let mock = MockEndpoint::new().with_chat(|_| {
            Ok(CompletionResponse {
                text: " ".into(),
                finish_reason: FinishReason::Stop,
                usage: Usage::default(),
                raw_provider_id: None,
            })
        });
        assert!(matches!(
            Gateway::mock(mock).complete(&request("x")),
            Err(GatewayError::Malformed(_))
        ));
    }

    #[test]
    fn logprobs_contract() {
        let ln2 = std::f64::consts::LN_2;
        let gw = Gateway::mock(MockEndpoint::new().with_uniform_logprob(-ln2));
        let a = gw.token_logprobs("the cell divides", "gpt2").unwrap();
        assert_eq!(a.tokens.len(), 3);
        assert!(a.logprobs.iter().all(|&v| v == -ln2));
        assert_eq!(gw.token_logprobs("the cell divides", "gpt2").unwrap(), a);
        assert_eq!(gw.network_calls(), 1);
        assert!(matches!(
            gw.token_logprobs("", "gpt2"),
            Err(GatewayError::InvalidArgument(_))
        ));

        let small = Gateway::mock(MockEndpoint::new().with_context_window(2));
        assert_eq!(
            small.token_logprobs("one two three", "gpt2"),
            Err(GatewayError::ContextOverflow {
                tokens: 3,
                limit: 2
            })
        );
    }

    #[test]
    fn positive_logprobs_are_rejected() {
        let gw = Gateway::mock(MockEndpoint::new().with_logprobs(|_, t| {
            Ok(TokenLogprobs {
                tokens: vec![t.into()],
                logprobs: vec![0.5],
            })
        }));
        assert!(matches!(
            gw.token_logprobs("x", "m"),
            Err(GatewayError::Malformed(_))
        ));
    }

    #[test]
    fn qa_spans_are_substrings() {
        let gw = Gateway::mock(MockEndpoint::new());
        let ctx = "Meiosis is a type of cell division. It results in the production of four haploid daughter cells.";
        let r = gw
            .answer_question(ctx, "How many daughter cells does meiosis produce?")
            .unwrap();
        assert!(ctx.contains(&r.predicted_span));
        assert!(!r.predicted_span.is_empty());

        let none = gw
            .answer_question("Zebras graze.", "What is photosynthesis?")
            .unwrap();
        assert_eq!(none.predicted_span, "");
        assert!((0.0..=1.0).contains(&none.confidence));

        let liar = Gateway::mock(MockEndpoint::new().with_qa(|_, _| {
            Ok(QAProbeResult {
                predicted_span: "not there".into(),
                confidence: 0.4,
            })
        }));
        assert!(matches!(
            liar.answer_question("abc", "q"),
            Err(GatewayError::Malformed(_))
        ));
    }

    #[test]
    fn qa_canned_answer_span() {
        let gw = Gateway::mock(MockEndpoint::new().with_qa(|ctx, _| {
            let span = "four haploid";
            Ok(QAProbeResult {
                predicted_span: if ctx.contains(span) {
                    span.into()
                } else {
                    String::new()
                },
                confidence: 0.9,
            })
        }));
        let r = gw
            .answer_question(
                "It results in the production of four haploid daughter cells.",
                "Meiosis usually produces ____ daughter cells.",
            )
            .unwrap();
        assert_eq!(r.predicted_span, "four haploid");
    }

    #[test]
    fn config_selects_transport() {
        let gw = Gateway::from_config(&GatewayConfig::default()).unwrap();
        assert!(gw.describe().starts_with("mock:"));
        let bad = GatewayConfig {
            endpoint: "ftp://x".into(),
            ..GatewayConfig::default()
        };
        assert!(matches!(
            Gateway::from_config(&bad),
            Err(GatewayError::Config(_))
        ));
    }

    #[test]
    fn concurrent_identical_requests_call_once() {
        let gw = Arc::new(Gateway::mock(MockEndpoint::new()));
        let r = request("question: Q\nanswer: A");
        std::thread::scope(|s| {
            for _ in 0..8 {
                let gw = gw.clone();
                let r = r.clone();
                s.spawn(move || gw.complete(&r).unwrap());
            }
        });
        assert_eq!(gw.network_calls(), 1);
    }
}
