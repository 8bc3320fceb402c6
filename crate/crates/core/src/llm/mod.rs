//! LLM access: chat requests, record/replay cassettes, retries and token
//! accounting. Every other module reaches an LLM only through [`Gateway`].

mod cassette;
mod conversation;
mod extract;
mod gateway;
mod provider;
mod settings;
mod types;

use thiserror::Error;

pub use cassette::{fingerprint, write_atomic, Cassette, CassetteEntry, CassetteError, CassetteMode};
pub use conversation::{Conversation, TranscriptEntry};
pub use extract::{code_blocks, extract_block, extract_code_block, find_code_block, CodeBlock};
pub use gateway::{Gateway, RetryPolicy, StageUsage, TokenLedger};
pub use provider::{FnProvider, HttpChatProvider, LlmProvider, ProviderError, ProviderReply, ScriptProvider, Usage};
pub use settings::{LlmSettings, DEFAULT_MODEL};
pub use types::{ChatTurn, LlmRequest, LlmResponse, Role, DEFAULT_MAX_OUTPUT_TOKENS, DEFAULT_TEMPERATURE};


#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("provider failed after {attempts} attempt(s): {source}")]
    Provider {
        attempts: u32,
        #[source]
        source: ProviderError,
    },
    #[error("no provider configured for a live call")]
    NoProvider,
    #[error("cassette miss for {tag} (fingerprint {fingerprint})")]
    CassetteMiss { tag: String, fingerprint: String },
    #[error("malformed response for {tag}: {reason}")]
    MalformedResponse { tag: String, reason: String },
    #[error("response contains no fenced code block")]
    NoCodeBlock,
    #[error(transparent)]
    Cassette(#[from] CassetteError),
}
