//! HTTP transport for OpenAI-compatible providers.
//!
//! * chat: `POST {base}/chat/completions`
//! * logprobs: `POST {base}/completions` with `echo: true, logprobs: 0, max_tokens: 0`
//! * extractive QA: `POST {qa_url}` with `{question, context}` → `{answer, score}`

use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{
    ChatWireRequest, CompletionResponse, Endpoint, EndpointError, FinishReason, QAProbeResult,
    TokenLogprobs, Usage,
};

pub struct HttpEndpoint {
    base_url: String,
    qa_url: Option<String>,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpEndpoint {
    pub fn new(
        base_url: &str,
        qa_url: Option<&str>,
        api_key: Option<String>,
        timeout: Duration,
    ) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpEndpoint {
            base_url: base_url.trim_end_matches('/').to_string(),
            qa_url: qa_url.map(str::to_string),
            api_key,
            agent,
        }
    }

    fn post(&self, url: &str, body: &Value) -> Result<Value, EndpointError> {
        let mut req = self
            .agent
            .post(url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(transport_error)?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| EndpointError::Transient(format!("reading body: {e}")))?;
        match status {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| EndpointError::Malformed(format!("invalid JSON body: {e}"))),
            401 | 403 => Err(EndpointError::Auth(format!("HTTP {status}"))),
            429 => Err(EndpointError::RateLimited(format!(
                "HTTP 429: {}",
                snippet(&text)
            ))),
            408 | 500..=599 => Err(EndpointError::Transient(format!(
                "HTTP {status}: {}",
                snippet(&text)
            ))),
            400 if text.contains("context length") || text.contains("context_length") => {
                Err(EndpointError::ContextOverflow {
                    tokens: 0,
                    limit: 0,
                })
            }
            _ => Err(EndpointError::Rejected(format!(
                "HTTP {status}: {}",
                snippet(&text)
            ))),
        }
    }
}

fn snippet(text: &str) -> String {
    text.chars().take(200).collect()
}

fn transport_error(e: ureq::Error) -> EndpointError {
    match e {
        ureq::Error::StatusCode(code) => EndpointError::Rejected(format!("HTTP {code}")),
        ureq::Error::BadUri(u) => EndpointError::Rejected(format!("bad URI {u}")),
        other => EndpointError::Transient(other.to_string()),
    }
}

#[derive(Deserialize)]
struct ChatBody {
    #[serde(default)]
    id: Option<String>,
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<UsageBody>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct UsageBody {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

pub(crate) fn parse_chat(body: Value) -> Result<CompletionResponse, EndpointError> {
    let body: ChatBody = serde_json::from_value(body)
        .map_err(|e| EndpointError::Malformed(format!("chat response: {e}")))?;
    let choice = body
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| EndpointError::Malformed("no choices".into()))?;
    let finish_reason = match choice.finish_reason.as_deref() {
        Some("stop") | None => FinishReason::Stop,
        Some("length") => FinishReason::Length,
        Some(_) => FinishReason::Error,
    };
    Ok(CompletionResponse {
        text: choice.message.content.unwrap_or_default(),
        finish_reason,
        usage: body
            .usage
            .map(|u| Usage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
            })
            .unwrap_or_default(),
        raw_provider_id: body.id,
    })
}

pub(crate) fn parse_logprobs(body: Value) -> Result<TokenLogprobs, EndpointError> {
    let lp = &body["choices"][0]["logprobs"];
    let tokens = lp["tokens"]
        .as_array()
        .ok_or_else(|| EndpointError::Malformed("missing logprobs.tokens".into()))?;
    let values = lp["token_logprobs"]
        .as_array()
        .ok_or_else(|| EndpointError::Malformed("missing logprobs.token_logprobs".into()))?;
    if tokens.len() != values.len() {
        return Err(EndpointError::Malformed(
            "tokens and token_logprobs differ in length".into(),
        ));
    }
    // The first token has no conditional probability and comes back as null.
    let mut out = TokenLogprobs {
        tokens: Vec::new(),
        logprobs: Vec::new(),
    };
    for (t, v) in tokens.iter().zip(values) {
        if v.is_null() {
            continue;
        }
        let t = t
            .as_str()
            .ok_or_else(|| EndpointError::Malformed("non-string token".into()))?;
        let v = v
            .as_f64()
            .ok_or_else(|| EndpointError::Malformed("non-numeric logprob".into()))?;
        out.tokens.push(t.to_string());
        out.logprobs.push(v);
    }
    Ok(out)
}

impl Endpoint for HttpEndpoint {
    fn chat(&self, request: &ChatWireRequest) -> Result<CompletionResponse, EndpointError> {
        let body = serde_json::to_value(request).expect("request serializes");
        parse_chat(self.post(&format!("{}/chat/completions", self.base_url), &body)?)
    }

    fn token_logprobs(&self, model: &str, text: &str) -> Result<TokenLogprobs, EndpointError> {
        let body = json!({
            "model": model,
            "prompt": text,
            "max_tokens": 0,
            "echo": true,
            "logprobs": 0,
        });
        parse_logprobs(self.post(&format!("{}/completions", self.base_url), &body)?)
    }

    fn answer_question(
        &self,
        context: &str,
        question: &str,
    ) -> Result<QAProbeResult, EndpointError> {
        let url = self
            .qa_url
            .as_deref()
            .ok_or_else(|| EndpointError::Unsupported("no QA endpoint configured".into()))?;
        let body = self.post(url, &json!({ "question": question, "context": context }))?;
        let answer = body["answer"]
            .as_str()
            .ok_or_else(|| EndpointError::Malformed("missing answer".into()))?;
        let score = body["score"]
            .as_f64()
            .ok_or_else(|| EndpointError::Malformed("missing score".into()))?;
        Ok(QAProbeResult {
            predicted_span: answer.to_string(),
            confidence: score,
        })
    }

    fn describe(&self) -> String {
        self.base_url.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chat_payload_parsing() {
        let r = parse_chat(json!({
            "id": "cmpl-1",
            "choices": [{"message": {"role": "assistant", "content": "CTX"}, "finish_reason": "length"}],
            "usage": {"prompt_tokens": 3, "completion_tokens": 1}
        }))
        .unwrap();
        assert_eq!(r.text, "CTX");
        assert_eq!(r.finish_reason, FinishReason::Length);
        assert_eq!(r.usage.completion_tokens, 1);
        assert_eq!(r.raw_provider_id.as_deref(), Some("cmpl-1"));
        assert!(matches!(
            parse_chat(json!({"choices": []})),
            Err(EndpointError::Malformed(_))
        ));
        assert!(matches!(
            parse_chat(json!({"nope": 1})),
            Err(EndpointError::Malformed(_))
        ));
    }

    #[test]
    fn logprob_payload_drops_leading_null() {
        let lp = parse_logprobs(json!({
            "choices": [{"logprobs": {"tokens": ["The", " cell"], "token_logprobs": [null, -1.5]}}]
        }))
        .unwrap();
        assert_eq!(lp.tokens, [" cell"]);
        assert_eq!(lp.logprobs, [-1.5]);
    }
}
