use serde::{Deserialize, Serialize};

use super::gateway::Gateway;
use super::settings::LlmSettings;
use super::types::{ChatTurn, Role};
use super::LlmError;

/// One recorded exchange, kept for audit transcripts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub tag: String,
    pub role: Role,
    pub content: String,
}

/// A multi-turn chat session: each [`ask`](Self::ask) sends the whole history
/// plus a new user turn, and appends the reply.
pub struct Conversation<'a> {
    gateway: &'a Gateway,
    settings: &'a LlmSettings,
    turns: Vec<ChatTurn>,
    transcript: Vec<TranscriptEntry>,
}

impl<'a> Conversation<'a> {
    pub fn new(gateway: &'a Gateway, settings: &'a LlmSettings, system: Option<String>) -> Self {
        let mut c = Self { gateway, settings, turns: Vec::new(), transcript: Vec::new() };
        if let Some(s) = system {
            c.transcript.push(TranscriptEntry { tag: String::new(), role: Role::System, content: s.clone() });
            c.turns.push(ChatTurn::system(s));
        }
        c
    }

    pub fn ask(&mut self, tag: &str, user: impl Into<String>) -> Result<String, LlmError> {
        let user = user.into();
        let mut turns = self.turns.clone();
        turns.push(ChatTurn::user(user.clone()));
        let request = self.settings.request(turns, tag);
        let response = self.gateway.complete(&request)?;
        self.turns = request.turns;
        self.turns.push(ChatTurn::assistant(response.content.clone()));
        self.transcript.push(TranscriptEntry { tag: tag.to_string(), role: Role::User, content: user });
        self.transcript.push(TranscriptEntry {
            tag: tag.to_string(),
            role: Role::Assistant,
            content: response.content.clone(),
        });
        Ok(response.content)
    }

    pub fn turns(&self) -> &[ChatTurn] {
        &self.turns
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    pub fn into_transcript(self) -> Vec<TranscriptEntry> {
        self.transcript
    }
}
