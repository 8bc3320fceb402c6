//! Per-task pipeline (agent run, then grading of the final testbench) and the
//! suite-level report.
//!
//! Reports carry no timestamps or paths, so replayed runs serialize to the
//! same bytes. Wall-clock timing is written to a separate file.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::agent::{resume, run_task, ActionCounts, AgentConfig, AgentError, LlmStages, RunResult, RunStore};
use crate::bundle::TaskBundle;
use crate::config::RunConfig;
use crate::context::StageContext;
use crate::eval::{evaluate, grade_suite, EvalLevel, EvalVerdict, GradeTable};
use crate::llm::{Gateway, TokenLedger};
use crate::sim::Simulator;
use crate::task::CircuitKind;
use crate::validator::{Criterion, EnsembleValidator};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub problem_id: String,
    pub circuit_kind: CircuitKind,
    pub final_verdict: Option<bool>,
    pub gave_up: bool,
    pub generations: u32,
    pub corrections: u32,
    pub total_actions: ActionCounts,
    /// Lineage of the final testbench.
    pub final_testbench: Option<(u32, u32)>,
    pub eval: Option<EvalVerdict>,
    pub token_ledger: TokenLedger,
    /// Set when the task stopped on an error instead of completing.
    pub error: Option<String>,
}

impl TaskReport {
    pub fn failed(bundle: &TaskBundle, error: String) -> Self {
        Self {
            problem_id: bundle.spec.problem_id.clone(),
            circuit_kind: bundle.spec.circuit_kind,
            final_verdict: None,
            gave_up: false,
            generations: 0,
            corrections: 0,
            total_actions: ActionCounts::default(),
            final_testbench: None,
            eval: None,
            token_ledger: TokenLedger::default(),
            error: Some(error),
        }
    }

    fn from_result(bundle: &TaskBundle, result: &RunResult, eval: Option<EvalVerdict>) -> Self {
        Self {
            problem_id: result.problem_id.clone(),
            circuit_kind: bundle.spec.circuit_kind,
            final_verdict: result.final_verdict,
            gave_up: result.gave_up,
            generations: result.generations,
            corrections: result.corrections,
            total_actions: result.total_actions,
            final_testbench: result.final_testbench.as_ref().map(|t| (t.generation, t.revision)),
            eval,
            token_ledger: result.token_ledger.clone(),
            error: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSettings {
    pub criterion: Criterion,
    pub n_rtl: usize,
    pub i_c_max: u32,
    pub i_r_max: u32,
    pub agreement_threshold: f64,
    pub model: String,
    pub stage_models: std::collections::BTreeMap<String, String>,
}

impl ReportSettings {
    pub fn of(config: &RunConfig, criterion: Criterion) -> Self {
        Self {
            criterion,
            n_rtl: config.n_rtl,
            i_c_max: config.i_c_max,
            i_r_max: config.i_r_max,
            agreement_threshold: config.agreement_threshold,
            model: config.llm.model.clone(),
            stage_models: config.llm.stage_models.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub settings: ReportSettings,
    pub tasks: Vec<TaskReport>,
    pub grades: GradeTable,
    pub token_ledger: TokenLedger,
}

impl RunReport {
    pub fn new(settings: ReportSettings, tasks: Vec<TaskReport>) -> Self {
        let graded: Vec<(CircuitKind, EvalLevel)> =
            tasks.iter().filter_map(|t| t.eval.as_ref().map(|e| (t.circuit_kind, e.level))).collect();
        let mut ledger = TokenLedger::default();
        for t in &tasks {
            ledger.merge(&t.token_ledger);
        }
        Self { schema_version: SCHEMA_VERSION, settings, grades: grade_suite(&graded), tasks, token_ledger: ledger }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskTiming {
    pub problem_id: String,
    pub elapsed_ms: u128,
}

/// How a task run should start.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Start {
    Fresh,
    Resume,
}

/// Runs the agent on one bundle in `store`, then grades the final testbench
/// when the bundle has mutants. Failures become a report with `error` set.
pub fn run_bundle(
    bundle: &TaskBundle,
    config: &RunConfig,
    agent: &AgentConfig,
    gateway: &Gateway,
    sim: &Simulator,
    store: &RunStore,
    start: Start,
) -> (TaskReport, Duration) {
    let t0 = Instant::now();
    let report = run_bundle_inner(bundle, config, agent, gateway, sim, store, start)
        .unwrap_or_else(|e| TaskReport::failed(bundle, e));
    (report, t0.elapsed())
}

fn run_bundle_inner(
    bundle: &TaskBundle,
    config: &RunConfig,
    agent: &AgentConfig,
    gateway: &Gateway,
    sim: &Simulator,
    store: &RunStore,
    start: Start,
) -> Result<TaskReport, String> {
    let criterion = config.criterion().map_err(|e| e.to_string())?;
    let ctx = StageContext::new(gateway, &config.llm, sim);
    let mut stages = LlmStages::new(ctx, EnsembleValidator::new(criterion, config.n_rtl));
    let result = match start {
        Start::Fresh => run_task(&bundle.spec, agent, &mut stages, store),
        Start::Resume => resume(&bundle.spec, agent, &mut stages, store),
    }
    .map_err(|e: AgentError| e.to_string())?;
    let eval = match (&bundle.eval, &result.final_testbench) {
        (Some(eb), Some(tb)) => {
            let verdict = evaluate(sim, tb, eb, config.agreement_threshold).map_err(|e| e.to_string())?;
            store.write_json(&store.root().join("eval.json"), &verdict).map_err(|e| e.to_string())?;
            Some(verdict)
        }
        _ => None,
    };
    Ok(TaskReport::from_result(bundle, &result, eval))
}
