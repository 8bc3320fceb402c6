use serde::{Deserialize, Serialize};

use super::LlmError;

/// Default sampling temperature for generation and correction stages.
pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub content: String,
}

impl ChatTurn {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

/// One chat-completion request.
///
/// `tag` is a dotted label such as `driver.g0` or `rtl.g1.i3r0`. Its first
/// segment names the pipeline stage used for token accounting, and the first
/// two segments name the cassette step file the response is recorded into.
/// The tag is not part of the request fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub model_id: String,
    pub turns: Vec<ChatTurn>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub tag: String,
}

impl LlmRequest {
    pub fn new(model_id: impl Into<String>, turns: Vec<ChatTurn>, tag: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            turns,
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            tag: tag.into(),
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_output_tokens(mut self, max: u32) -> Self {
        self.max_output_tokens = max;
        self
    }

    /// Stage name used for accounting: the tag up to the first dot.
    pub fn stage(&self) -> &str {
        self.tag.split('.').next().unwrap_or("")
    }

    /// Cassette step name: the first two tag segments.
    pub fn step(&self) -> String {
        let mut parts = self.tag.split('.');
        match (parts.next(), parts.next()) {
            (Some(a), Some(b)) if !a.is_empty() && !b.is_empty() => format!("{a}.{b}"),
            (Some(a), _) if !a.is_empty() => a.to_string(),
            _ => "untagged".to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        let invalid = |msg: &str| Err(LlmError::InvalidRequest(format!("{}: {msg}", self.tag)));
        if self.model_id.trim().is_empty() {
            return invalid("empty model id");
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return invalid("temperature must be a finite value >= 0");
        }
        if self.max_output_tokens == 0 {
            return invalid("max_output_tokens must be positive");
        }
        let Some(last) = self.turns.last() else {
            return invalid("no turns");
        };
        if last.role != Role::User {
            return invalid("last turn must be a user turn");
        }
        if self.turns.iter().any(|t| t.content.is_empty()) {
            return invalid("empty turn content");
        }
        let mut expected = Role::User;
        let mut leading = true;
        for turn in &self.turns {
            if turn.role == Role::System {
                if !leading {
                    return invalid("system turn after conversation start");
                }
                continue;
            }
            leading = false;
            if turn.role != expected {
                return invalid("user/assistant turns must alternate starting with user");
            }
            expected = if expected == Role::User { Role::Assistant } else { Role::User };
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub content: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// True when served from the cassette rather than a live provider call.
    pub cached: bool,
}
