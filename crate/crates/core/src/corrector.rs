//! Two-stage correction of a testbench judged wrong: a three-question
//! diagnosis (why / where / how), then regeneration of the core code in the
//! same conversation, spliced back into the fixed skeletons.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::StageContext;
use crate::generator::{enhance, format_scenarios, llm_fatal, GenError};
use crate::llm::{find_code_block, Conversation, LlmError, TranscriptEntry};
use crate::prompts::{Template, TemplateError};
use crate::task::TaskSpec;
use crate::testbench::{extract_core, ScenarioDescriptor, SpliceError, Testbench, CHECKER_ANCHORS, DRIVER_ANCHORS};
use crate::validator::{ScenarioClass, ValidationReport};

#[derive(Debug, Error)]
pub enum CorrectError {
    #[error("corrector precondition: {0}")]
    Precondition(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("splice failure: {0}")]
    Splice(#[from] SpliceError),
    #[error("post-correction enhance: {0}")]
    Enhance(#[from] GenError),
}

impl CorrectError {
    pub fn is_fatal(&self) -> bool {
        match self {
            CorrectError::Llm(e) => llm_fatal(e),
            CorrectError::Enhance(e) => e.is_fatal(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrectionContext {
    pub spec: TaskSpec,
    pub testbench: Testbench,
    pub wrong_indexes: BTreeSet<usize>,
    pub correct_indexes: BTreeSet<usize>,
    pub uncertain_indexes: BTreeSet<usize>,
    pub scenario_texts: Vec<ScenarioDescriptor>,
}

impl CorrectionContext {
    pub fn from_report(spec: &TaskSpec, testbench: &Testbench, report: &ValidationReport) -> Result<Self, CorrectError> {
        if report.verdict {
            return Err(CorrectError::Precondition("validation verdict is already true".into()));
        }
        if report.scenario_classes.len() != testbench.n_scenarios() {
            return Err(CorrectError::Precondition(format!(
                "report covers {} scenarios, testbench has {}",
                report.scenario_classes.len(),
                testbench.n_scenarios()
            )));
        }
        let set = |c| report.indexes_of(c).into_iter().collect::<BTreeSet<_>>();
        let ctx = Self {
            spec: spec.clone(),
            testbench: testbench.clone(),
            wrong_indexes: set(ScenarioClass::Wrong),
            correct_indexes: set(ScenarioClass::Correct),
            uncertain_indexes: set(ScenarioClass::Uncertain),
            scenario_texts: testbench.scenarios.clone(),
        };
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn validate(&self) -> Result<(), CorrectError> {
        if self.wrong_indexes.is_empty() {
            return Err(CorrectError::Precondition("no scenario is classed wrong".into()));
        }
        let n = self.testbench.n_scenarios();
        let total = self.wrong_indexes.len() + self.correct_indexes.len() + self.uncertain_indexes.len();
        let union: BTreeSet<usize> =
            self.wrong_indexes.iter().chain(&self.correct_indexes).chain(&self.uncertain_indexes).copied().collect();
        if total != n || union != (0..n).collect() {
            return Err(CorrectError::Precondition("scenario classes do not partition the scenario indexes".into()));
        }
        Ok(())
    }

    fn session(&self) -> String {
        format!("g{}r{}", self.testbench.generation, self.testbench.revision)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub why: String,
    #[serde(rename = "where")]
    pub where_: String,
    pub how: String,
}

/// Diagnosis plus the open conversation that the correction continues.
pub struct DiagnosisSession<'a> {
    pub diagnosis: Diagnosis,
    pub conversation: Conversation<'a>,
}

fn describe(set: &BTreeSet<usize>, scenarios: &[ScenarioDescriptor]) -> String {
    if set.is_empty() {
        return "none".into();
    }
    set.iter()
        .map(|&i| match scenarios.get(i) {
            Some(s) => format!("{i} ({})", s.name),
            None => i.to_string(),
        })
        .collect::<Vec<_>>()
        .join(", ")
}

/// Text following `label` (e.g. `WHY:`) at the start of any line. A reply
/// without the label is rejected.
pub fn labelled_answer(reply: &str, label: &str) -> Option<String> {
    let upper = label.to_ascii_uppercase();
    let mut lines = reply.lines();
    while let Some(line) = lines.next() {
        let t = line.trim_start().trim_start_matches(['*', '#', ' ']);
        if t.len() >= upper.len() && t[..upper.len()].eq_ignore_ascii_case(&upper) {
            let mut body = vec![t[upper.len()..].trim_start_matches('*').trim()];
            body.extend(lines.by_ref());
            let text = body.join("\n").trim().to_string();
            return (!text.is_empty()).then_some(text);
        }
    }
    None
}

fn ask_labelled(conv: &mut Conversation, tag: &str, question: String, label: &str) -> Result<String, CorrectError> {
    let reprompt = Template::RepromptLabel.render(&[("label", label)])?;
    match conv.ask(tag, question.clone()) {
        Ok(reply) => {
            if let Some(a) = labelled_answer(&reply, label) {
                return Ok(a);
            }
            let retry = conv.ask(&format!("{tag}.retry"), reprompt)?;
            labelled_answer(&retry, label).ok_or_else(|| malformed(tag, label))
        }
        // empty reply: nothing to append, so ask again with the reminder
        Err(LlmError::MalformedResponse { .. }) => {
            let retry = conv.ask(&format!("{tag}.retry"), format!("{question}\n\n{reprompt}"))?;
            labelled_answer(&retry, label).ok_or_else(|| malformed(tag, label))
        }
        Err(e) => Err(e.into()),
    }
}

fn malformed(tag: &str, label: &str) -> CorrectError {
    CorrectError::Llm(LlmError::MalformedResponse { tag: tag.into(), reason: format!("no '{label}' answer after a reprompt") })
}

/// Stage one: three questions in one session.
pub fn diagnose<'a>(ctx: &StageContext<'a>, cc: &CorrectionContext) -> Result<DiagnosisSession<'a>, CorrectError> {
    cc.validate()?;
    let session = cc.session();
    let mut conv = ctx.conversation(Template::SystemTestbench, &format!("diagnose.{session}"))?;
    let tb = &cc.testbench;
    let why_q = Template::DiagnoseWhy.render(&[
        ("spec", cc.spec.spec_text.trim()),
        ("header", cc.spec.module_header.trim()),
        ("scenarios", &format_scenarios(&cc.scenario_texts)),
        ("driver", tb.driver_core()?.trim_end()),
        ("checker", tb.checker_core()?.trim_end()),
        ("wrong", &describe(&cc.wrong_indexes, &cc.scenario_texts)),
        ("correct", &describe(&cc.correct_indexes, &cc.scenario_texts)),
        ("uncertain", &describe(&cc.uncertain_indexes, &cc.scenario_texts)),
    ])?;
    let why = ask_labelled(&mut conv, &format!("diagnose.{session}.why"), why_q, "WHY:")?;
    let where_ = ask_labelled(&mut conv, &format!("diagnose.{session}.where"), Template::DiagnoseWhere.render(&[])?, "WHERE:")?;
    let how = ask_labelled(&mut conv, &format!("diagnose.{session}.how"), Template::DiagnoseHow.render(&[])?, "HOW:")?;
    Ok(DiagnosisSession { diagnosis: Diagnosis { why, where_, how }, conversation: conv })
}

/// Stage two: continues the diagnosis session, takes the returned core
/// code, splices it in and bumps the revision. Files without a returned
/// block are carried forward unchanged.
pub fn apply_correction(cc: &CorrectionContext, session: &mut DiagnosisSession) -> Result<Testbench, CorrectError> {
    let tag = format!("correct.{}", cc.session());
    let reply = session.conversation.ask(&tag, Template::Correct.render(&[])?)?;
    let driver = find_code_block(&reply, "verilog");
    let checker = find_code_block(&reply, "python");
    if driver.is_none() && checker.is_none() {
        return Err(LlmError::NoCodeBlock.into());
    }
    let mut tb = cc.testbench.clone();
    if let Some(b) = driver {
        tb = tb.with_driver_core(&extract_core(&b.body, DRIVER_ANCHORS)?)?;
    }
    if let Some(b) = checker {
        tb = tb.with_checker_core(&extract_core(&b.body, CHECKER_ANCHORS)?)?;
    }
    tb.revision = cc.testbench.revision + 1;
    Ok(tb)
}

#[derive(Debug, Clone)]
pub struct Correction {
    pub testbench: Testbench,
    pub diagnosis: Diagnosis,
    pub transcript: Vec<TranscriptEntry>,
}

/// Diagnose, apply, then enhance the result as a syntax safety net.
pub fn correct(
    ctx: &StageContext,
    spec: &TaskSpec,
    testbench: &Testbench,
    report: &ValidationReport,
) -> Result<Correction, CorrectError> {
    let cc = CorrectionContext::from_report(spec, testbench, report)?;
    let mut session = diagnose(ctx, &cc)?;
    let corrected = apply_correction(&cc, &mut session)?;
    let enhanced = enhance(ctx, spec, corrected)?;
    Ok(Correction {
        testbench: enhanced,
        diagnosis: session.diagnosis,
        transcript: session.conversation.into_transcript(),
    })
}
