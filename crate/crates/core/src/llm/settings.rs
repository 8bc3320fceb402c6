use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::types::{ChatTurn, LlmRequest, DEFAULT_MAX_OUTPUT_TOKENS, DEFAULT_TEMPERATURE};

pub const DEFAULT_MODEL: &str = "gpt-4o-2024-08-06";

/// Model and sampling settings, with optional per-stage model overrides keyed
/// by the first tag segment (`scenarios`, `driver`, `rtl`, `diagnose`, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmSettings {
    pub model: String,
    pub stage_models: BTreeMap<String, String>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Upper bound on concurrent requests when a stage fans out.
    pub max_parallel_requests: usize,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            model: DEFAULT_MODEL.into(),
            stage_models: BTreeMap::new(),
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            max_parallel_requests: 4,
        }
    }
}

impl LlmSettings {
    pub fn model_for(&self, stage: &str) -> &str {
        self.stage_models.get(stage).unwrap_or(&self.model)
    }

    pub fn request(&self, turns: Vec<ChatTurn>, tag: impl Into<String>) -> LlmRequest {
        let tag = tag.into();
        let stage = tag.split('.').next().unwrap_or_default().to_string();
        LlmRequest {
            model_id: self.model_for(&stage).to_string(),
            turns,
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
            tag,
        }
    }
}
