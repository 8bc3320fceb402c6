use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::cassette::{fingerprint, Cassette, CassetteEntry, CassetteMode};
use super::provider::{LlmProvider, ProviderError};
use super::types::{LlmRequest, LlmResponse};
use super::LlmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Extra attempts after the first one, for transient provider failures only.
    pub max_retries: u32,
    pub base_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, base_backoff: Duration::from_millis(500) }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageUsage {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Calls whose provider reported no usage block; counted as zero tokens.
    pub unmetered_calls: u64,
}

/// Token usage per pipeline stage.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenLedger(pub BTreeMap<String, StageUsage>);

impl TokenLedger {
    pub fn record(&mut self, stage: &str, prompt: u64, completion: u64, unmetered: bool) {
        let usage = self.0.entry(stage.to_string()).or_default();
        usage.calls += 1;
        usage.prompt_tokens += prompt;
        usage.completion_tokens += completion;
        if unmetered {
            usage.unmetered_calls += 1;
        }
    }

    pub fn merge(&mut self, other: &TokenLedger) {
        for (stage, u) in &other.0 {
            let mine = self.0.entry(stage.clone()).or_default();
            mine.calls += u.calls;
            mine.prompt_tokens += u.prompt_tokens;
            mine.completion_tokens += u.completion_tokens;
            mine.unmetered_calls += u.unmetered_calls;
        }
    }

    pub fn total(&self) -> StageUsage {
        let mut total = StageUsage::default();
        for u in self.0.values() {
            total.calls += u.calls;
            total.prompt_tokens += u.prompt_tokens;
            total.completion_tokens += u.completion_tokens;
            total.unmetered_calls += u.unmetered_calls;
        }
        total
    }
}

/// The single path from pipeline stages to an LLM.
///
/// Holds the cassette and the token ledger behind mutexes so that ensemble
/// fan-out can share one gateway across threads.
pub struct Gateway {
    provider: Option<Box<dyn LlmProvider>>,
    cassette: Mutex<Cassette>,
    ledger: Mutex<TokenLedger>,
    retry: RetryPolicy,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("provider", &self.provider.as_ref().map(|p| p.name()))
            .field("mode", &self.mode())
            .finish()
    }
}

impl Gateway {
    pub fn new(cassette: Cassette) -> Self {
        Self {
            provider: None,
            cassette: Mutex::new(cassette),
            ledger: Mutex::new(TokenLedger::default()),
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_provider(mut self, provider: impl LlmProvider + 'static) -> Self {
        self.provider = Some(Box::new(provider));
        self
    }

    pub fn with_boxed_provider(mut self, provider: Box<dyn LlmProvider>) -> Self {
        self.provider = Some(provider);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn mode(&self) -> CassetteMode {
        self.cassette.lock().expect("cassette lock").mode()
    }

    pub fn ledger(&self) -> TokenLedger {
        self.ledger.lock().expect("ledger lock").clone()
    }

    pub fn restore_ledger(&self, ledger: TokenLedger) {
        *self.ledger.lock().expect("ledger lock") = ledger;
    }

    pub fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        request.validate()?;
        let fp = fingerprint(request);
        let mode = self.mode();

        if mode != CassetteMode::Passthrough {
            let hit = self.cassette.lock().expect("cassette lock").get(&fp).cloned();
            if let Some(entry) = hit {
                if entry.content.trim().is_empty() {
                    return Err(LlmError::MalformedResponse {
                        tag: request.tag.clone(),
                        reason: "recorded response is empty".into(),
                    });
                }
                self.account(request, entry.prompt_tokens, entry.completion_tokens, false);
                return Ok(LlmResponse {
                    content: entry.content,
                    prompt_tokens: entry.prompt_tokens,
                    completion_tokens: entry.completion_tokens,
                    cached: true,
                });
            }
            if mode == CassetteMode::Replay {
                return Err(LlmError::CassetteMiss { tag: request.tag.clone(), fingerprint: fp });
            }
        }

        let reply = self.call_provider(request)?;
        if reply.content.trim().is_empty() {
            return Err(LlmError::MalformedResponse {
                tag: request.tag.clone(),
                reason: "provider returned empty content".into(),
            });
        }
        let (prompt, completion, unmetered) = match reply.usage {
            Some(u) => (u.prompt_tokens, u.completion_tokens, false),
            None => (0, 0, true),
        };
        if mode == CassetteMode::Record {
            let entry = CassetteEntry {
                content: reply.content.clone(),
                prompt_tokens: prompt,
                completion_tokens: completion,
            };
            self.cassette.lock().expect("cassette lock").insert(&request.step(), &fp, entry)?;
        }
        self.account(request, prompt, completion, unmetered);
        Ok(LlmResponse { content: reply.content, prompt_tokens: prompt, completion_tokens: completion, cached: false })
    }

    fn account(&self, request: &LlmRequest, prompt: u64, completion: u64, unmetered: bool) {
        self.ledger.lock().expect("ledger lock").record(request.stage(), prompt, completion, unmetered);
    }

    fn call_provider(&self, request: &LlmRequest) -> Result<super::provider::ProviderReply, LlmError> {
        let provider = self.provider.as_ref().ok_or(LlmError::NoProvider)?;
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            match provider.send(request) {
                Ok(reply) => return Ok(reply),
                Err(err) if err.is_transient() && attempt <= self.retry.max_retries => {
                    log::warn!("{}: attempt {attempt} failed ({err}); retrying", request.tag);
                    let backoff = self.retry.base_backoff.saturating_mul(1 << (attempt - 1).min(6));
                    if !backoff.is_zero() {
                        std::thread::sleep(backoff);
                    }
                }
                Err(source) => return Err(LlmError::Provider { attempts: attempt, source }),
            }
        }
    }
}

/// Lets callers treat a transport failure as a plain `ProviderError`.
impl From<ProviderError> for LlmError {
    fn from(source: ProviderError) -> Self {
        LlmError::Provider { attempts: 1, source }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::provider::{FnProvider, ProviderReply, Usage};
    use crate::llm::types::ChatTurn;
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::sync::Arc;

    fn req(text: &str) -> LlmRequest {
        LlmRequest::new("m", vec![ChatTurn::user(text)], "driver.g0")
    }

    fn no_backoff() -> RetryPolicy {
        RetryPolicy { max_retries: 3, base_backoff: Duration::ZERO }
    }

    #[test]
    fn replay_hit_is_cached() {
        let mut cassette = Cassette::in_memory(CassetteMode::Replay);
        let r = req("hi");
        cassette
            .insert("driver.g0", &fingerprint(&r), CassetteEntry {
                content: "answer".into(),
                prompt_tokens: 3,
                completion_tokens: 5,
            })
            .unwrap();
        let gw = Gateway::new(cassette);
        let resp = gw.complete(&r).unwrap();
        assert_eq!(resp.content, "answer");
        assert!(resp.cached);
        assert_eq!(gw.ledger().0["driver"].completion_tokens, 5);
    }

    #[test]
    fn replay_miss_never_calls_provider() {
        let calls = Arc::new(AtomicU32::new(0));
        let c = calls.clone();
        let gw = Gateway::new(Cassette::in_memory(CassetteMode::Replay)).with_provider(FnProvider::new(move |_| {
            c.fetch_add(1, Ordering::SeqCst);
            Ok(ProviderReply { content: "x".into(), usage: None })
        }));
        let err = gw.complete(&req("hi")).unwrap_err();
        assert!(matches!(err, LlmError::CassetteMiss { .. }));
        assert_eq!(calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn record_then_replay_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let counter = Arc::new(AtomicU32::new(0));
        let c = counter.clone();
        let provider = FnProvider::new(move |_| {
            let n = c.fetch_add(1, Ordering::SeqCst);
            Ok(ProviderReply {
                content: format!("sampled answer {n}\n  with trailing space "),
                usage: Some(Usage { prompt_tokens: 4, completion_tokens: 9 }),
            })
        });
        let gw = Gateway::new(Cassette::open(dir.path(), CassetteMode::Record).unwrap()).with_provider(provider);
        let first = gw.complete(&req("q")).unwrap();
        let second = gw.complete(&req("q")).unwrap();
        assert!(!first.cached);
        assert!(second.cached);
        assert_eq!(first.content, second.content);
        assert_eq!(counter.load(Ordering::SeqCst), 1);

        let replay_a = Gateway::new(Cassette::open(dir.path(), CassetteMode::Replay).unwrap());
        let replay_b = Gateway::new(Cassette::open(dir.path(), CassetteMode::Replay).unwrap());
        let a = replay_a.complete(&req("q")).unwrap();
        let b = replay_b.complete(&req("q")).unwrap();
        assert_eq!(a.content.as_bytes(), first.content.as_bytes());
        assert_eq!(a.content.as_bytes(), b.content.as_bytes());
        assert_eq!(replay_a.ledger(), replay_b.ledger());
    }

    #[test]
    fn complete_does_not_mutate_request() {
        let gw = Gateway::new(Cassette::in_memory(CassetteMode::Passthrough))
            .with_provider(FnProvider::new(|_| Ok(ProviderReply { content: "ok".into(), usage: None })));
        let r = req("q");
        let before = r.clone();
        gw.complete(&r).unwrap();
        assert_eq!(r, before);
        let usage = &gw.ledger().0["driver"];
        assert_eq!(usage.unmetered_calls, 1);
        assert_eq!(usage.prompt_tokens, 0);
    }

    #[test]
    fn transient_errors_retry_up_to_bound() {
        let calls = Arc::new(AtomicU32::new(0));
        let c = calls.clone();
        let gw = Gateway::new(Cassette::in_memory(CassetteMode::Passthrough))
            .with_retry(no_backoff())
            .with_provider(FnProvider::new(move |_| {
                c.fetch_add(1, Ordering::SeqCst);
                Err(ProviderError::Transport("connection reset".into()))
            }));
        let err = gw.complete(&req("q")).unwrap_err();
        assert!(matches!(err, LlmError::Provider { attempts: 4, .. }));
        assert_eq!(calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn auth_errors_and_empty_content_are_not_retried() {
        let calls = Arc::new(AtomicU32::new(0));
        let c = calls.clone();
        let gw = Gateway::new(Cassette::in_memory(CassetteMode::Passthrough))
            .with_retry(no_backoff())
            .with_provider(FnProvider::new(move |_| {
                c.fetch_add(1, Ordering::SeqCst);
                Err(ProviderError::Auth("bad key".into()))
            }));
        assert!(gw.complete(&req("q")).is_err());
        assert_eq!(calls.load(Ordering::SeqCst), 1);

        let calls = Arc::new(AtomicU32::new(0));
        let c = calls.clone();
        let gw = Gateway::new(Cassette::in_memory(CassetteMode::Record))
            .with_retry(no_backoff())
            .with_provider(FnProvider::new(move |_| {
                c.fetch_add(1, Ordering::SeqCst);
                Ok(ProviderReply { content: "  \n".into(), usage: None })
            }));
        assert!(matches!(gw.complete(&req("q")), Err(LlmError::MalformedResponse { .. })));
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn concurrent_record_writes_are_serialized() {
        let dir = tempfile::tempdir().unwrap();
        let gw = Gateway::new(Cassette::open(dir.path(), CassetteMode::Record).unwrap()).with_provider(
            FnProvider::new(|r: &LlmRequest| {
                Ok(ProviderReply { content: format!("echo {}", r.turns[0].content), usage: None })
            }),
        );
        std::thread::scope(|s| {
            for i in 0..8 {
                let gw = &gw;
                s.spawn(move || gw.complete(&req(&format!("q{i}"))).unwrap());
            }
        });
        let replay = Cassette::open(dir.path(), CassetteMode::Replay).unwrap();
        assert_eq!(replay.len(), 8);
        assert_eq!(gw.ledger().0["driver"].calls, 8);
    }
}
