//! OpenAI-compatible HTTP clients for chat completions and embeddings, and a
//! tokenizer-count client for the context-budget filter.
//!
//! Clients make one attempt per call; retries and backoff belong to
//! [`Generator`](crate::generation::Generator) and [`Embedder`](crate::similarity::Embedder).

use std::time::Duration;

use serde_json::{json, Value};

use crate::corpus::TokenCounter;
use crate::error::{Error, Result};
use crate::generation::{DecodingMode, GenerationRequest, LlmProvider, Role};
use crate::retry::ProviderFailure;
use crate::similarity::EmbeddingProvider;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone)]
pub struct Endpoint {
    pub url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
}

impl Endpoint {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        Endpoint {
            url: url.into(),
            api_key: None,
            model: model.into(),
            timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key.filter(|k| !k.is_empty());
        self
    }

    fn agent(&self) -> ureq::Agent {
        ureq::AgentBuilder::new().timeout(self.timeout).build()
    }

    fn post(&self, agent: &ureq::Agent, body: Value) -> std::result::Result<Value, ProviderFailure> {
        let mut req = agent.post(&self.url).set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        match req.send_json(body) {
            Ok(resp) => resp
                .into_json::<Value>()
                .map_err(|e| ProviderFailure::transient(format!("unreadable response body: {e}"))),
            Err(ureq::Error::Status(code, resp)) => {
                let detail = resp.into_string().unwrap_or_default();
                let message = format!("HTTP {code} from {}: {}", self.url, detail.trim());
                if code == 408 || code == 429 || code >= 500 {
                    Err(ProviderFailure::transient(message))
                } else {
                    Err(ProviderFailure::fatal(message))
                }
            }
            Err(ureq::Error::Transport(t)) => Err(ProviderFailure::transient(format!(
                "transport error for {}: {t}",
                self.url
            ))),
        }
    }
}

pub struct OpenAiChatProvider {
    endpoint: Endpoint,
    agent: ureq::Agent,
}

impl OpenAiChatProvider {
    pub fn new(endpoint: Endpoint) -> Self {
        let agent = endpoint.agent();
        OpenAiChatProvider { endpoint, agent }
    }

    /// Request body in the chat-completions wire format. `top_k` is sent as an
    /// extension field, and only when sampling.
    pub fn request_body(&self, request: &GenerationRequest) -> Value {
        let mut messages = Vec::with_capacity(request.messages.len() + 1);
        if !request.system_prompt.is_empty() {
            messages.push(json!({"role": "system", "content": request.system_prompt}));
        }
        for m in &request.messages {
            let role = match m.role {
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            messages.push(json!({"role": role, "content": m.content}));
        }
        let d = &request.decoding;
        let mut body = json!({
            "model": self.endpoint.model,
            "messages": messages,
            "max_tokens": d.max_new_tokens,
        });
        match d.mode {
            DecodingMode::Greedy => {
                body["temperature"] = json!(0.0);
            }
            DecodingMode::Sampled => {
                body["temperature"] = json!(d.temperature);
                body["top_p"] = json!(d.top_p);
                body["top_k"] = json!(d.top_k);
            }
        }
        body
    }
}

impl LlmProvider for OpenAiChatProvider {
    fn id(&self) -> &str {
        &self.endpoint.model
    }

    fn complete(&self, request: &GenerationRequest) -> std::result::Result<String, ProviderFailure> {
        let v = self.endpoint.post(&self.agent, self.request_body(request))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| ProviderFailure::fatal("response has no choices[0].message.content"))
    }
}

pub struct OpenAiEmbeddingProvider {
    endpoint: Endpoint,
    agent: ureq::Agent,
}

impl OpenAiEmbeddingProvider {
    pub fn new(endpoint: Endpoint) -> Self {
        let agent = endpoint.agent();
        OpenAiEmbeddingProvider { endpoint, agent }
    }
}

impl EmbeddingProvider for OpenAiEmbeddingProvider {
    fn id(&self) -> &str {
        &self.endpoint.model
    }

    fn embed(&self, texts: &[&str]) -> std::result::Result<Vec<Vec<f64>>, ProviderFailure> {
        let v = self
            .endpoint
            .post(&self.agent, json!({"model": self.endpoint.model, "input": texts}))?;
        let data = v["data"]
            .as_array()
            .ok_or_else(|| ProviderFailure::fatal("response has no data array"))?;
        data.iter()
            .map(|item| {
                item["embedding"]
                    .as_array()
                    .and_then(|xs| xs.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
                    .ok_or_else(|| ProviderFailure::fatal("malformed embedding"))
            })
            .collect()
    }
}

/// Counts tokens with a remote tokenizer: POST `{"model", "prompt"}`,
/// reading either `{"count": n}` or the length of `{"tokens": [...]}`.
pub struct HttpTokenCounter {
    endpoint: Endpoint,
    agent: ureq::Agent,
}

impl HttpTokenCounter {
    pub fn new(endpoint: Endpoint) -> Self {
        let agent = endpoint.agent();
        HttpTokenCounter { endpoint, agent }
    }
}

impl TokenCounter for HttpTokenCounter {
    fn count(&self, text: &str) -> Result<usize> {
        let v = self
            .endpoint
            .post(&self.agent, json!({"model": self.endpoint.model, "prompt": text}))
            .map_err(|f| Error::ProviderUnavailable(f.message))?;
        v["count"]
            .as_u64()
            .map(|n| n as usize)
            .or_else(|| v["tokens"].as_array().map(Vec::len))
            .ok_or_else(|| Error::ProviderUnavailable("tokenizer response has no count".into()))
    }
}
