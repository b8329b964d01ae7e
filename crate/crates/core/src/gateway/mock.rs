//! In-tree endpoint for offline runs and tests.
//!
//! Defaults are deterministic functions of the input:
//! * chat: echoes the question and answer lines of the last user message as
//!   a short paragraph (so the answer is always contained);
//! * logprobs: whitespace tokens with hash-derived values in [-4, -1];
//! * QA: the context sentence sharing the most words with the question.
//!
//! URL form: `mock:` optionally followed by `?logprob=<f64>&window=<n>`.

use std::collections::{HashMap, HashSet};

use super::{
    ChatWireRequest, CompletionResponse, EndpointError, FinishReason, QAProbeResult, TokenLogprobs,
    Usage,
};
use crate::metrics::normalized_tokens;

type ChatFn = dyn Fn(&ChatWireRequest) -> Result<CompletionResponse, EndpointError> + Send + Sync;
type LogprobFn = dyn Fn(&str, &str) -> Result<TokenLogprobs, EndpointError> + Send + Sync;
type QaFn = dyn Fn(&str, &str) -> Result<QAProbeResult, EndpointError> + Send + Sync;

pub struct MockEndpoint {
    url: String,
    canned: HashMap<String, String>,
    chat: Option<Box<ChatFn>>,
    logprobs: Option<Box<LogprobFn>>,
    qa: Option<Box<QaFn>>,
    uniform_logprob: Option<f64>,
    context_window: Option<usize>,
}

impl Default for MockEndpoint {
    fn default() -> Self {
        Self::new()
    }
}

impl MockEndpoint {
    pub fn new() -> Self {
        MockEndpoint {
            url: "mock:".into(),
            canned: HashMap::new(),
            chat: None,
            logprobs: None,
            qa: None,
            uniform_logprob: None,
            context_window: None,
        }
    }

    pub fn from_url(url: &str) -> Result<Self, String> {
        let rest = url
            .strip_prefix("mock:")
            .ok_or_else(|| format!("not a mock URL: {url}"))?;
        let mut mock = MockEndpoint::new();
        mock.url = url.to_string();
        let query = rest.trim_start_matches("//").trim_start_matches('?');
        for kv in query.split('&').filter(|s| !s.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| format!("bad mock option {kv:?}"))?;
            match k {
                "logprob" => {
                    let x: f64 = v.parse().map_err(|_| format!("bad logprob {v:?}"))?;
                    mock.uniform_logprob = Some(x);
                }
                "window" => {
                    mock.context_window = Some(v.parse().map_err(|_| format!("bad window {v:?}"))?);
                }
                other => return Err(format!("unknown mock option {other:?}")),
            }
        }
        Ok(mock)
    }

    /// Fixed responses by request key; other requests use the default.
    pub fn with_canned(mut self, entries: impl IntoIterator<Item = (String, String)>) -> Self {
        self.canned.extend(entries);
        self
    }

    pub fn with_chat(
        mut self,
        f: impl Fn(&ChatWireRequest) -> Result<CompletionResponse, EndpointError>
            + Send
            + Sync
            + 'static,
    ) -> Self {
        self.chat = Some(Box::new(f));
        self
    }

    pub fn with_logprobs(
        mut self,
        f: impl Fn(&str, &str) -> Result<TokenLogprobs, EndpointError> + Send + Sync + 'static,
    ) -> Self {
        self.logprobs = Some(Box::new(f));
        self
    }

    pub fn with_qa(
        mut self,
        f: impl Fn(&str, &str) -> Result<QAProbeResult, EndpointError> + Send + Sync + 'static,
    ) -> Self {
        self.qa = Some(Box::new(f));
        self
    }

    pub fn with_uniform_logprob(mut self, value: f64) -> Self {
        self.uniform_logprob = Some(value);
        self
    }

    pub fn with_context_window(mut self, tokens: usize) -> Self {
        self.context_window = Some(tokens);
        self
    }
}

/// A finished completion with `text`, as a mock handler would return it.
pub fn stop(text: String) -> CompletionResponse {
    CompletionResponse {
        usage: Usage {
            prompt_tokens: 0,
            completion_tokens: text.split_whitespace().count() as u64,
        },
        text,
        finish_reason: FinishReason::Stop,
        raw_provider_id: None,
    }
}

fn field<'a>(message: &'a str, label: &str) -> Option<&'a str> {
    message
        .lines()
        .rev()
        .find_map(|l| l.strip_prefix(label))
        .map(str::trim)
        .filter(|s| !s.is_empty())
}

fn default_context(request: &ChatWireRequest) -> String {
    let last_user = request
        .messages
        .iter()
        .rev()
        .find(|m| m.role == "user")
        .map(|m| m.content.as_str())
        .unwrap_or("");
    match (field(last_user, "question:"), field(last_user, "answer:")) {
        (Some(q), Some(a)) => {
            let topic = field(last_user, "title:")
                .map(|t| format!("{} is a topic of general interest. ", t.replace('_', " ")))
                .unwrap_or_default();
            format!("{topic}A common question is: {q} The answer is {a}.")
        }
        _ => format!(
            "Mock context for request {}.",
            &super::request_key(request)[..12]
        ),
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3)
    })
}

fn best_sentence(context: &str, question: &str) -> QAProbeResult {
    let q: HashSet<String> = normalized_tokens(question).into_iter().collect();
    let mut best: Option<(usize, &str)> = None;
    for sentence in context.split_inclusive(['.', '!', '?']) {
        let s = sentence.trim();
        if s.is_empty() {
            continue;
        }
        let words: HashSet<String> = normalized_tokens(s).into_iter().collect();
        let overlap = words.intersection(&q).count();
        if overlap > 0 && best.is_none_or(|(b, _)| overlap > b) {
            best = Some((overlap, s));
        }
    }
    match best {
        Some((overlap, s)) => QAProbeResult {
            predicted_span: s.to_string(),
            confidence: overlap as f64 / q.len().max(1) as f64,
        },
        None => QAProbeResult {
            predicted_span: String::new(),
            confidence: 0.0,
        },
    }
}

impl super::Endpoint for MockEndpoint {
    fn chat(&self, request: &ChatWireRequest) -> Result<CompletionResponse, EndpointError> {
        if let Some(text) = self.canned.get(&super::request_key(request)) {
            return Ok(stop(text.clone()));
        }
        match &self.chat {
            Some(f) => f(request),
            None => Ok(stop(default_context(request))),
        }
    }

    fn token_logprobs(&self, model: &str, text: &str) -> Result<TokenLogprobs, EndpointError> {
        let tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        if let Some(limit) = self.context_window {
            if tokens.len() > limit {
                return Err(EndpointError::ContextOverflow {
                    tokens: tokens.len(),
                    limit,
                });
            }
        }
        if let Some(f) = &self.logprobs {
            return f(model, text);
        }
        let logprobs = tokens
            .iter()
            .map(|t| match self.uniform_logprob {
                Some(v) => v,
                None => -1.0 - (fnv1a(t) % 301) as f64 / 100.0,
            })
            .collect();
        Ok(TokenLogprobs { tokens, logprobs })
    }

    fn answer_question(
        &self,
        context: &str,
        question: &str,
    ) -> Result<QAProbeResult, EndpointError> {
        match &self.qa {
            Some(f) => f(context, question),
            None => Ok(best_sentence(context, question)),
        }
    }

    fn describe(&self) -> String {
        self.url.clone()
    }
}
