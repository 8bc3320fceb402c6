//! Testbench generation: scenario list, driver track, checker track, then
//! self-enhancement (syntax debugging, code completion, scenario
//! reconciliation).

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use crate::context::{clip_log, session_of, StageContext};
use crate::llm::{extract_block, LlmError};
use crate::prompts::{Template, TemplateError};
use crate::sim::{CheckerError, SimError};
use crate::task::{CircuitKind, TaskError, TaskSpec};
use crate::testbench::{
    check_scenarios, checker_skeleton, driver_skeleton, extract_core, looks_truncated_verilog, splice, Anchors,
    ScenarioDescriptor, SpliceError, Testbench, TestbenchError, CHECKER_ANCHORS, DRIVER_ANCHORS,
};

/// Syntax-debug iterations allowed per `enhance` call.
pub const SYNTAX_DEBUG_LIMIT: u32 = 3;
pub const RECONCILE_LIMIT: u32 = 2;
const LOG_LINES: usize = 60;

#[derive(Debug, Error)]
pub enum GenError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Splice(#[from] SpliceError),
    #[error(transparent)]
    Testbench(#[from] TestbenchError),
    #[error("no usable scenario list after a reprompt")]
    UnparseableScenarioList,
    #[error("testbench still fails its syntax check after {iterations} debug iteration(s): {log}")]
    SyntaxUnresolved { iterations: u32, log: String },
    #[error("driver scenario indexes {found:?} do not match 0..{expected} after reconciliation")]
    ScenarioMismatch { found: Vec<usize>, expected: usize },
    #[error("generation failed in {stage}: {source}")]
    GenerationFailed {
        stage: &'static str,
        #[source]
        source: Box<GenError>,
    },
}

impl GenError {
    /// Errors that no amount of regeneration can fix (missing recordings,
    /// missing tools, bad credentials).
    pub fn is_fatal(&self) -> bool {
        match self {
            GenError::Llm(e) => llm_fatal(e),
            GenError::Sim(SimError::ToolMissing { .. }) => true,
            GenError::GenerationFailed { source, .. } => source.is_fatal(),
            _ => false,
        }
    }

    fn in_stage(self, stage: &'static str) -> GenError {
        match self {
            e @ GenError::GenerationFailed { .. } => e,
            e => GenError::GenerationFailed { stage, source: Box::new(e) },
        }
    }
}

pub fn llm_fatal(e: &LlmError) -> bool {
    use crate::llm::ProviderError;
    matches!(
        e,
        LlmError::CassetteMiss { .. }
            | LlmError::NoProvider
            | LlmError::Cassette(_)
            | LlmError::Provider { source: ProviderError::Auth(_), .. }
    )
}

static LIST_ITEM: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(?:[-*]\s+)?(?:\*\*)?(\d+)(?:\*\*)?[.):]\s*(.*\S)\s*$").unwrap());

fn identifier(raw: &str) -> String {
    let mut out = String::new();
    for c in raw.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

/// Parses a numbered list into descriptors, re-indexed from 0 in order of
/// appearance. Items read `name: description`; without a colon the whole
/// text is the description and the name is derived from the position.
pub fn parse_scenario_list(text: &str) -> Vec<ScenarioDescriptor> {
    let mut out: Vec<ScenarioDescriptor> = Vec::new();
    let mut names = BTreeSet::new();
    for line in text.lines() {
        let Some(caps) = LIST_ITEM.captures(line) else { continue };
        let body = caps[2].replace("**", "").replace('`', "");
        let body = body.trim();
        if body.is_empty() {
            continue;
        }
        let index = out.len();
        let (name, description) = match body.split_once(':') {
            Some((n, d)) if !n.trim().is_empty() && n.split_whitespace().count() <= 6 => {
                (identifier(n), d.trim().to_string())
            }
            _ => (String::new(), body.to_string()),
        };
        let mut name = if name.is_empty() { format!("scenario_{index}") } else { name };
        if !names.insert(name.clone()) {
            name = format!("{name}_{index}");
            names.insert(name.clone());
        }
        let description = if description.is_empty() { name.clone() } else { description };
        out.push(ScenarioDescriptor { index, name, description });
    }
    out
}

pub fn format_scenarios(scenarios: &[ScenarioDescriptor]) -> String {
    scenarios.iter().map(|s| format!("{}. {}: {}", s.index, s.name, s.description)).collect::<Vec<_>>().join("\n")
}

fn kind_name(kind: CircuitKind) -> &'static str {
    match kind {
        CircuitKind::Combinational => "combinational",
        CircuitKind::Sequential => "sequential (clocked)",
    }
}

fn index_list(v: &[usize]) -> String {
    if v.is_empty() {
        "none".into()
    } else {
        v.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")
    }
}

/// Asks for a code block in a fresh session and returns its core region.
fn ask_core(
    ctx: &StageContext,
    tag: &str,
    prompt: String,
    lang: &str,
    anchors: Anchors,
) -> Result<String, GenError> {
    let mut conv = ctx.conversation(Template::SystemTestbench, &session_of(tag))?;
    let reply = conv.ask(tag, prompt)?;
    let block = extract_block(&reply, lang)?;
    Ok(extract_core(&block.body, anchors)?)
}

pub fn generate_scenarios(
    ctx: &StageContext,
    spec: &TaskSpec,
    generation: u32,
) -> Result<Vec<ScenarioDescriptor>, GenError> {
    let tag = format!("scenarios.g{generation}");
    let mut conv = ctx.conversation(Template::SystemTestbench, &tag)?;
    let prompt = Template::Scenarios.render(&[
        ("spec", spec.spec_text.trim()),
        ("header", spec.module_header.trim()),
        ("kind", kind_name(spec.circuit_kind)),
    ])?;
    let mut list = parse_scenario_list(&conv.ask(&tag, prompt)?);
    if list.is_empty() {
        let retry = Template::RepromptScenarios.render(&[])?;
        list = parse_scenario_list(&conv.ask(&format!("{tag}.retry"), retry)?);
    }
    if list.is_empty() {
        return Err(GenError::UnparseableScenarioList);
    }
    check_scenarios(&list)?;
    Ok(list)
}

/// Full driver source: the skeleton with a model-written core.
pub fn generate_driver(
    ctx: &StageContext,
    spec: &TaskSpec,
    scenarios: &[ScenarioDescriptor],
    generation: u32,
) -> Result<String, GenError> {
    check_scenarios(scenarios)?;
    let iface = spec.interface()?;
    let skeleton = driver_skeleton(&iface);
    let clock_note = match iface.clock() {
        Some(c) => format!("drives the clock `{}` (period {} time units), ", c.name, 2 * crate::testbench::CLOCK_HALF_PERIOD),
        None => String::new(),
    };
    let last = (scenarios.len() - 1).to_string();
    let prompt = Template::Driver.render(&[
        ("spec", spec.spec_text.trim()),
        ("header", spec.module_header.trim()),
        ("scenarios", &format_scenarios(scenarios)),
        ("skeleton", skeleton.trim_end()),
        ("clock_note", &clock_note),
        ("last_index", &last),
    ])?;
    let core = ask_core(ctx, &format!("driver.g{generation}"), prompt, "verilog", DRIVER_ANCHORS)?;
    Ok(splice(&skeleton, DRIVER_ANCHORS, &core)?)
}

/// Full checker source: the skeleton with a model-written reference model.
pub fn generate_checker(
    ctx: &StageContext,
    spec: &TaskSpec,
    scenarios: &[ScenarioDescriptor],
    generation: u32,
) -> Result<String, GenError> {
    check_scenarios(scenarios)?;
    let iface = spec.interface()?;
    let skeleton = checker_skeleton(&iface, scenarios.len());
    let state_note = match spec.circuit_kind {
        CircuitKind::Sequential => {
            "The design is clocked: keep the model state in the instance and update it once per record, \
             since every record is taken after one clock edge. "
        }
        CircuitKind::Combinational => "",
    };
    let prompt = Template::Checker.render(&[
        ("spec", spec.spec_text.trim()),
        ("header", spec.module_header.trim()),
        ("scenarios", &format_scenarios(scenarios)),
        ("skeleton", skeleton.trim_end()),
        ("state_note", state_note),
    ])?;
    let core = ask_core(ctx, &format!("checker.g{generation}"), prompt, "python", CHECKER_ANCHORS)?;
    Ok(splice(&skeleton, CHECKER_ANCHORS, &core)?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum SyntaxProblem {
    Driver(String),
    Checker(String),
}

fn syntax_problem(ctx: &StageContext, tb: &Testbench) -> Result<Option<SyntaxProblem>, GenError> {
    let driver = ctx.sim.check_driver(&tb.driver_source, &tb.module_header)?;
    if !driver.ok {
        return Ok(Some(SyntaxProblem::Driver(driver.log)));
    }
    match ctx.sim.probe_checker(&tb.checker_source, tb.n_scenarios()) {
        Ok(()) => Ok(None),
        Err(CheckerError::Crash { log, .. }) => Ok(Some(SyntaxProblem::Checker(log))),
        Err(CheckerError::Io(e)) => Err(SimError::Io(e).into()),
        Err(e) => Ok(Some(SyntaxProblem::Checker(e.to_string()))),
    }
}

/// Passes `tb` through a syntax check and returns whether it is clean.
pub fn syntax_clean(ctx: &StageContext, tb: &Testbench) -> Result<bool, GenError> {
    Ok(syntax_problem(ctx, tb)?.is_none())
}

fn expected_indexes(tb: &Testbench) -> BTreeSet<usize> {
    (0..tb.n_scenarios()).collect()
}

fn completion_problem(tb: &Testbench) -> Result<Option<(bool, String)>, GenError> {
    let driver_core = tb.driver_core()?;
    let found = tb.driver_scenario_indexes();
    let n = tb.n_scenarios();
    let m = found.len();
    if looks_truncated_verilog(driver_core) {
        return Ok(Some((true, "it ends in the middle of a block.".into())));
    }
    if m > 0 && m < n && found == (0..m).collect() {
        return Ok(Some((true, format!("it stops after scenario {}; scenarios {m} to {} are missing.", m - 1, n - 1))));
    }
    if !tb.checker_core()?.contains("def check") {
        return Ok(Some((false, "the ReferenceModel class with its check method is missing.".into())));
    }
    Ok(None)
}

fn debug_once(ctx: &StageContext, tb: &Testbench, problem: &SyntaxProblem, k: u32) -> Result<Testbench, GenError> {
    let (name, action, lang, anchors, log, core) = match problem {
        SyntaxProblem::Driver(log) => ("driver", "compile", "verilog", DRIVER_ANCHORS, log, tb.driver_core()?),
        SyntaxProblem::Checker(log) => ("checker", "run", "python", CHECKER_ANCHORS, log, tb.checker_core()?),
    };
    let tag = format!("debug.g{}r{}.{name}{k}", tb.generation, tb.revision);
    let prompt = Template::Debug.render(&[
        ("artifact", name),
        ("action", action),
        ("lang", lang),
        ("code", core.trim_end()),
        ("log", &clip_log(log, LOG_LINES)),
    ])?;
    let fixed = ask_core(ctx, &tag, prompt, lang, anchors)?;
    Ok(match problem {
        SyntaxProblem::Driver(_) => tb.with_driver_core(&fixed)?,
        SyntaxProblem::Checker(_) => tb.with_checker_core(&fixed)?,
    })
}

fn complete_once(ctx: &StageContext, spec: &TaskSpec, tb: &Testbench, driver: bool, problem: &str) -> Result<Testbench, GenError> {
    let (name, lang, anchors, core) = if driver {
        ("driver", "verilog", DRIVER_ANCHORS, tb.driver_core()?)
    } else {
        ("checker", "python", CHECKER_ANCHORS, tb.checker_core()?)
    };
    let tag = format!("complete.g{}r{}.{name}", tb.generation, tb.revision);
    let prompt = Template::Complete.render(&[
        ("spec", spec.spec_text.trim()),
        ("scenarios", &format_scenarios(&tb.scenarios)),
        ("artifact", name),
        ("problem", problem),
        ("lang", lang),
        ("code", core.trim_end()),
    ])?;
    let fixed = ask_core(ctx, &tag, prompt, lang, anchors)?;
    Ok(if driver { tb.with_driver_core(&fixed)? } else { tb.with_checker_core(&fixed)? })
}

fn reconcile_once(ctx: &StageContext, tb: &Testbench, k: u32) -> Result<Testbench, GenError> {
    let found = tb.driver_scenario_indexes();
    let expected = expected_indexes(tb);
    let missing: Vec<usize> = expected.difference(&found).copied().collect();
    let extra: Vec<usize> = found.difference(&expected).copied().collect();
    let found: Vec<usize> = found.into_iter().collect();
    let tag = format!("reconcile.g{}r{}.{k}", tb.generation, tb.revision);
    let prompt = Template::Reconcile.render(&[
        ("scenarios", &format_scenarios(&tb.scenarios)),
        ("last_index", &(tb.n_scenarios() - 1).to_string()),
        ("found", &index_list(&found)),
        ("missing", &index_list(&missing)),
        ("extra", &index_list(&extra)),
        ("code", tb.driver_core()?.trim_end()),
    ])?;
    let fixed = ask_core(ctx, &tag, prompt, "verilog", DRIVER_ANCHORS)?;
    Ok(tb.with_driver_core(&fixed)?)
}

/// Self-enhancement. Runs to a fixpoint over three checks, in order:
/// syntax (driver compiles against a stub DUT, checker runs on an empty
/// dump), completion (truncated driver tail or missing reference model,
/// repaired once), and scenario reconciliation (driver indexes equal
/// 0..N_S). A clean testbench comes back unchanged with no LLM calls.
pub fn enhance(ctx: &StageContext, spec: &TaskSpec, testbench: Testbench) -> Result<Testbench, GenError> {
    let mut tb = testbench;
    let mut debug_used = 0;
    let mut completed = false;
    let mut reconciles = 0;
    loop {
        if let Some(problem) = syntax_problem(ctx, &tb)? {
            if debug_used == SYNTAX_DEBUG_LIMIT {
                let log = match problem {
                    SyntaxProblem::Driver(l) | SyntaxProblem::Checker(l) => clip_log(&l, 20),
                };
                return Err(GenError::SyntaxUnresolved { iterations: debug_used, log });
            }
            tb = debug_once(ctx, &tb, &problem, debug_used)?;
            debug_used += 1;
            continue;
        }
        if !completed {
            if let Some((driver, problem)) = completion_problem(&tb)? {
                completed = true;
                tb = complete_once(ctx, spec, &tb, driver, &problem)?;
                continue;
            }
        }
        if tb.driver_scenario_indexes() != expected_indexes(&tb) {
            if reconciles == RECONCILE_LIMIT {
                return Err(GenError::ScenarioMismatch {
                    found: tb.driver_scenario_indexes().into_iter().collect(),
                    expected: tb.n_scenarios(),
                });
            }
            tb = reconcile_once(ctx, &tb, reconciles)?;
            reconciles += 1;
            continue;
        }
        return Ok(tb);
    }
}

/// Scenarios, driver, checker, enhance. Revision starts at 0.
pub fn generate_testbench(ctx: &StageContext, spec: &TaskSpec, generation: u32) -> Result<Testbench, GenError> {
    spec.validate()?;
    let scenarios = generate_scenarios(ctx, spec, generation).map_err(|e| e.in_stage("scenarios"))?;
    let driver = generate_driver(ctx, spec, &scenarios, generation).map_err(|e| e.in_stage("driver"))?;
    let checker = generate_checker(ctx, spec, &scenarios, generation).map_err(|e| e.in_stage("checker"))?;
    let tb = Testbench {
        module_header: spec.module_header.clone(),
        driver_source: driver,
        checker_source: checker,
        scenarios,
        generation,
        revision: 0,
    };
    enhance(ctx, spec, tb).map_err(|e| e.in_stage("enhance"))
}
