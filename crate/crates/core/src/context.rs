use crate::llm::{Conversation, Gateway, LlmSettings};
use crate::prompts::{Template, TemplateError};
use crate::sim::Simulator;

/// What every LLM-driven stage needs: the gateway, model settings and the
/// simulator.
#[derive(Clone, Copy)]
pub struct StageContext<'a> {
    pub gateway: &'a Gateway,
    pub llm: &'a LlmSettings,
    pub sim: &'a Simulator,
}

impl<'a> StageContext<'a> {
    pub fn new(gateway: &'a Gateway, llm: &'a LlmSettings, sim: &'a Simulator) -> Self {
        Self { gateway, llm, sim }
    }

    /// A conversation opened with `system`, salted with the session id so that
    /// requests from different steps never share a fingerprint.
    pub fn conversation(&self, system: Template, session: &str) -> Result<Conversation<'a>, TemplateError> {
        let sys = system.render(&[("session", session)])?;
        Ok(Conversation::new(self.gateway, self.llm, Some(sys)))
    }
}

/// First two segments of a tag (`debug.g0r1.driver0` -> `debug.g0r1`).
pub fn session_of(tag: &str) -> String {
    tag.split('.').take(2).collect::<Vec<_>>().join(".")
}

/// Keeps the first `max_lines` lines of a tool log for prompting.
pub fn clip_log(log: &str, max_lines: usize) -> String {
    let lines: Vec<&str> = log.lines().collect();
    if lines.len() <= max_lines {
        return log.trim_end().to_string();
    }
    format!("{}\n... ({} more lines)", lines[..max_lines].join("\n"), lines.len() - max_lines)
}
