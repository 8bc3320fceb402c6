use std::path::PathBuf;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;
use thiserror::Error;

use super::types::LlmRequest;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderReply {
    pub content: String,
    /// `None` when the provider sent no usage block.
    pub usage: Option<Usage>,
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("http status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("authentication: {0}")]
    Auth(String),
    #[error("undecodable reply: {0}")]
    Decode(String),
    #[error("no scripted response for tag '{0}'")]
    NoScript(String),
}

impl ProviderError {
    /// Transport-level failures worth retrying: connection problems,
    /// timeouts, rate limiting and server-side errors.
    pub fn is_transient(&self) -> bool {
        match self {
            ProviderError::Transport(_) => true,
            ProviderError::Http { status, .. } => *status == 408 || *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub trait LlmProvider: Send + Sync {
    fn name(&self) -> &str;
    fn send(&self, request: &LlmRequest) -> Result<ProviderReply, ProviderError>;
}

/// Provider backed by a closure; handy for tests and embedding.
pub struct FnProvider<F> {
    f: F,
}

impl<F> FnProvider<F>
where
    F: Fn(&LlmRequest) -> Result<ProviderReply, ProviderError> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        Self { f }
    }
}

impl<F> LlmProvider for FnProvider<F>
where
    F: Fn(&LlmRequest) -> Result<ProviderReply, ProviderError> + Send + Sync,
{
    fn name(&self) -> &str {
        "fn"
    }

    fn send(&self, request: &LlmRequest) -> Result<ProviderReply, ProviderError> {
        (self.f)(request)
    }
}

/// OpenAI-style `POST {endpoint}/chat/completions` client.
pub struct HttpChatProvider {
    endpoint: String,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl HttpChatProvider {
    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>, timeout: Duration) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        Ok(Self { endpoint: endpoint.into().trim_end_matches('/').to_string(), api_key: api_key.into(), client })
    }

    fn url(&self) -> String {
        if self.endpoint.ends_with("/chat/completions") {
            self.endpoint.clone()
        } else {
            format!("{}/chat/completions", self.endpoint)
        }
    }
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

#[derive(Deserialize)]
struct WireReply {
    choices: Vec<WireChoice>,
    usage: Option<WireUsage>,
}

pub(crate) fn request_body(request: &LlmRequest) -> serde_json::Value {
    let messages: Vec<_> = request
        .turns
        .iter()
        .map(|t| json!({ "role": t.role.as_str(), "content": t.content }))
        .collect();
    json!({
        "model": request.model_id,
        "messages": messages,
        "temperature": request.temperature,
        "max_tokens": request.max_output_tokens,
    })
}

pub(crate) fn parse_reply(body: &str) -> Result<ProviderReply, ProviderError> {
    let wire: WireReply = serde_json::from_str(body).map_err(|e| ProviderError::Decode(e.to_string()))?;
    let content = wire
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| ProviderError::Decode("no choices[0].message.content".into()))?;
    let usage = wire.usage.and_then(|u| match (u.prompt_tokens, u.completion_tokens) {
        (Some(p), Some(c)) => Some(Usage { prompt_tokens: p, completion_tokens: c }),
        _ => None,
    });
    Ok(ProviderReply { content, usage })
}

impl LlmProvider for HttpChatProvider {
    fn name(&self) -> &str {
        "http"
    }

    fn send(&self, request: &LlmRequest) -> Result<ProviderReply, ProviderError> {
        let resp = self
            .client
            .post(self.url())
            .bearer_auth(&self.api_key)
            .json(&request_body(request))
            .send()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| ProviderError::Transport(e.to_string()))?;
        match status {
            200..=299 => parse_reply(&body),
            401 | 403 => Err(ProviderError::Auth(format!("status {status}"))),
            _ => Err(ProviderError::Http { status, body: body.chars().take(500).collect() }),
        }
    }
}

/// Offline provider that answers from files in a directory.
///
/// For a request tagged `rtl.g0.i3r0` it looks for `rtl.g0.i3r0.txt`, then
/// `rtl.g0.txt`, then `rtl.txt`, dropping one trailing tag segment at a time.
/// Usage is reported as whitespace-separated word counts so the token ledger
/// has stable, non-zero figures.
pub struct ScriptProvider {
    dir: PathBuf,
}

impl ScriptProvider {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
}

impl LlmProvider for ScriptProvider {
    fn name(&self) -> &str {
        "script"
    }

    fn send(&self, request: &LlmRequest) -> Result<ProviderReply, ProviderError> {
        let segments: Vec<&str> = request.tag.split('.').collect();
        for n in (1..=segments.len()).rev() {
            let path = self.dir.join(format!("{}.txt", segments[..n].join(".")));
            if let Ok(content) = std::fs::read_to_string(&path) {
                let words = |s: &str| s.split_whitespace().count() as u64;
                let prompt: u64 = request.turns.iter().map(|t| words(&t.content)).sum();
                return Ok(ProviderReply {
                    usage: Some(Usage { prompt_tokens: prompt, completion_tokens: words(&content) }),
                    content,
                });
            }
        }
        Err(ProviderError::NoScript(request.tag.clone()))
    }
}
