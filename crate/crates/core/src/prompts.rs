//! Prompt templates. The text lives in `templates/*.txt` and is compiled in;
//! `{{name}}` slots are filled by [`render`].

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

/// Bump when any template text changes; recorded in run reports.
pub const TEMPLATE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Template {
    SystemTestbench,
    Scenarios,
    Driver,
    Checker,
    Debug,
    Complete,
    Reconcile,
    SystemRtl,
    Rtl,
    DiagnoseWhy,
    DiagnoseWhere,
    DiagnoseHow,
    Correct,
    RepromptLabel,
    RepromptScenarios,
}

impl Template {
    pub const ALL: [Template; 15] = [
        Template::SystemTestbench,
        Template::Scenarios,
        Template::Driver,
        Template::Checker,
        Template::Debug,
        Template::Complete,
        Template::Reconcile,
        Template::SystemRtl,
        Template::Rtl,
        Template::DiagnoseWhy,
        Template::DiagnoseWhere,
        Template::DiagnoseHow,
        Template::Correct,
        Template::RepromptLabel,
        Template::RepromptScenarios,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Template::SystemTestbench => "system_testbench",
            Template::Scenarios => "scenarios",
            Template::Driver => "driver",
            Template::Checker => "checker",
            Template::Debug => "debug",
            Template::Complete => "complete",
            Template::Reconcile => "reconcile",
            Template::SystemRtl => "system_rtl",
            Template::Rtl => "rtl",
            Template::DiagnoseWhy => "diagnose_why",
            Template::DiagnoseWhere => "diagnose_where",
            Template::DiagnoseHow => "diagnose_how",
            Template::Correct => "correct",
            Template::RepromptLabel => "reprompt_label",
            Template::RepromptScenarios => "reprompt_scenarios",
        }
    }

    pub fn text(self) -> &'static str {
        match self {
            Template::SystemTestbench => include_str!("../templates/system_testbench.txt"),
            Template::Scenarios => include_str!("../templates/scenarios.txt"),
            Template::Driver => include_str!("../templates/driver.txt"),
            Template::Checker => include_str!("../templates/checker.txt"),
            Template::Debug => include_str!("../templates/debug.txt"),
            Template::Complete => include_str!("../templates/complete.txt"),
            Template::Reconcile => include_str!("../templates/reconcile.txt"),
            Template::SystemRtl => include_str!("../templates/system_rtl.txt"),
            Template::Rtl => include_str!("../templates/rtl.txt"),
            Template::DiagnoseWhy => include_str!("../templates/diagnose_why.txt"),
            Template::DiagnoseWhere => include_str!("../templates/diagnose_where.txt"),
            Template::DiagnoseHow => include_str!("../templates/diagnose_how.txt"),
            Template::Correct => include_str!("../templates/correct.txt"),
            Template::RepromptLabel => include_str!("../templates/reprompt_label.txt"),
            Template::RepromptScenarios => include_str!("../templates/reprompt_scenarios.txt"),
        }
    }

    pub fn render(self, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
        render(self.name(), self.text(), vars)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template '{template}' has no value for '{{{{{slot}}}}}'")]
    MissingValue { template: String, slot: String },
    #[error("template '{template}' does not use '{slot}'")]
    UnusedValue { template: String, slot: String },
}

static SLOT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{\{([a-z_]+)\}\}").unwrap());

/// Substitutes every `{{slot}}`. Values are inserted verbatim and never
/// re-scanned, so code containing braces is safe. Every slot needs a value
/// and every value needs a slot.
pub fn render(name: &str, text: &str, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
    let values: BTreeMap<&str, &str> = vars.iter().copied().collect();
    let mut used = BTreeMap::new();
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for caps in SLOT.captures_iter(text) {
        let m = caps.get(0).expect("match");
        let slot = caps.get(1).expect("group").as_str();
        let value = values
            .get(slot)
            .ok_or_else(|| TemplateError::MissingValue { template: name.into(), slot: slot.into() })?;
        used.insert(slot, ());
        out.push_str(&text[last..m.start()]);
        out.push_str(value);
        last = m.end();
    }
    out.push_str(&text[last..]);
    if let Some(k) = values.keys().find(|k| !used.contains_key(*k)) {
        return Err(TemplateError::UnusedValue { template: name.into(), slot: k.to_string() });
    }
    Ok(out)
}

/// Slots a template expects, in order of first use.
pub fn slots(text: &str) -> Vec<String> {
    let mut seen = Vec::new();
    for c in SLOT.captures_iter(text) {
        let s = c[1].to_string();
        if !seen.contains(&s) {
            seen.push(s);
        }
    }
    seen
}
