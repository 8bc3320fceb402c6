//! The control loop: generate a testbench, validate it, then correct it,
//! reboot (regenerate from scratch) or pass, under two bounded counters.
//!
//! The loop is a small state machine whose phase is persisted after every
//! transition, so an interrupted run can be resumed from its run directory.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::StageContext;
use crate::corrector::{correct, Correction};
use crate::generator::generate_testbench;
use crate::llm::{TokenLedger, TranscriptEntry};
use crate::sim::RtlCandidate;
use crate::task::TaskSpec;
use crate::testbench::Testbench;
use crate::validator::{EnsembleValidator, ValidationReport};

pub const DEFAULT_I_C_MAX: u32 = 3;
pub const DEFAULT_I_R_MAX: u32 = 10;
pub const STATE_FILE: &str = "state.json";
pub const RESULT_FILE: &str = "result.json";
pub const TIMING_FILE: &str = "timing.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    None,
    Correcting,
    Rebooting,
    Pass,
}

/// Next action for a verdict. Pure and total over the bounded state space.
pub fn decide(state: &AgentState, verdict: bool) -> Action {
    if verdict {
        Action::Pass
    } else if state.i_c < state.i_c_max {
        Action::Correcting
    } else if state.i_r < state.i_r_max {
        Action::Rebooting
    } else {
        Action::Pass
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryAction {
    Generate,
    Correct,
    Reboot,
    Pass,
    StageError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    /// Position in the run; orders entries independently of wall-clock time.
    pub seq: u32,
    pub action: HistoryAction,
    /// Verdict that led to this entry, when there was one.
    pub verdict: Option<bool>,
    pub generation: u32,
    pub revision: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Generate,
    Validate,
    Correct,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentState {
    pub problem_id: String,
    pub i_c: u32,
    pub i_r: u32,
    pub i_c_max: u32,
    pub i_r_max: u32,
    pub action: Action,
    pub phase: Phase,
    /// Lineage of the current testbench, if one exists.
    pub current: Option<(u32, u32)>,
    pub last_verdict: Option<bool>,
    pub gave_up: bool,
    pub history: Vec<HistoryEntry>,
    /// Wall-clock time of each history entry, for reporting only.
    pub wall_clock: Vec<String>,
    pub ledger: TokenLedger,
}

impl AgentState {
    pub fn new(problem_id: &str, i_c_max: u32, i_r_max: u32) -> Self {
        Self {
            problem_id: problem_id.to_string(),
            i_c: 0,
            i_r: 0,
            i_c_max,
            i_r_max,
            action: Action::None,
            phase: Phase::Generate,
            current: None,
            last_verdict: None,
            gave_up: false,
            history: Vec::new(),
            wall_clock: Vec::new(),
            ledger: TokenLedger::default(),
        }
    }

    fn push(&mut self, action: HistoryAction, verdict: Option<bool>, lineage: (u32, u32), note: Option<String>) {
        self.history.push(HistoryEntry {
            seq: self.history.len() as u32,
            action,
            verdict,
            generation: lineage.0,
            revision: lineage.1,
            note,
        });
        self.wall_clock.push(Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true));
    }

    pub fn count(&self, action: HistoryAction) -> usize {
        self.history.iter().filter(|h| h.action == action).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ActionCounts {
    pub generate: u32,
    pub correct: u32,
    pub reboot: u32,
    pub pass: u32,
    pub stage_error: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub problem_id: String,
    pub final_testbench: Option<Testbench>,
    pub final_verdict: Option<bool>,
    /// Pass was emitted without a true verdict.
    pub gave_up: bool,
    pub generations: u32,
    pub corrections: u32,
    pub total_actions: ActionCounts,
    pub history: Vec<HistoryEntry>,
    pub token_ledger: TokenLedger,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{stage} failed: {message}")]
pub struct StageError {
    pub stage: &'static str,
    pub message: String,
    /// Environment failure that regeneration cannot fix; aborts the run.
    pub fatal: bool,
}

/// The three stage functions the loop drives. Implemented by
/// [`LlmStages`] for real runs and by scripted stubs in tests.
pub trait Stages {
    fn generate(&mut self, spec: &TaskSpec, generation: u32) -> Result<Testbench, StageError>;
    fn validate(&mut self, spec: &TaskSpec, testbench: &Testbench) -> Result<ValidationReport, StageError>;
    fn correct(
        &mut self,
        spec: &TaskSpec,
        testbench: &Testbench,
        report: &ValidationReport,
    ) -> Result<Correction, StageError>;

    fn ledger(&self) -> TokenLedger {
        TokenLedger::default()
    }
    fn restore_ledger(&mut self, _ledger: TokenLedger) {}
    fn ensemble(&self) -> Option<(u32, Vec<RtlCandidate>)> {
        None
    }
    fn restore_ensemble(&mut self, _generation: u32, _ensemble: Vec<RtlCandidate>) {}
}

pub struct LlmStages<'a> {
    pub ctx: StageContext<'a>,
    pub validator: EnsembleValidator,
}

impl<'a> LlmStages<'a> {
    pub fn new(ctx: StageContext<'a>, validator: EnsembleValidator) -> Self {
        Self { ctx, validator }
    }
}

fn stage_err(stage: &'static str, e: impl std::fmt::Display, fatal: bool) -> StageError {
    StageError { stage, message: e.to_string(), fatal }
}

impl Stages for LlmStages<'_> {
    fn generate(&mut self, spec: &TaskSpec, generation: u32) -> Result<Testbench, StageError> {
        generate_testbench(&self.ctx, spec, generation).map_err(|e| {
            let fatal = e.is_fatal();
            stage_err("generate", e, fatal)
        })
    }

    fn validate(&mut self, spec: &TaskSpec, testbench: &Testbench) -> Result<ValidationReport, StageError> {
        self.validator.validate(&self.ctx, spec, testbench).map_err(|e| {
            let fatal = e.is_fatal();
            stage_err("validate", e, fatal)
        })
    }

    fn correct(&mut self, spec: &TaskSpec, testbench: &Testbench, report: &ValidationReport) -> Result<Correction, StageError> {
        correct(&self.ctx, spec, testbench, report).map_err(|e| {
            let fatal = e.is_fatal();
            stage_err("correct", e, fatal)
        })
    }

    fn ledger(&self) -> TokenLedger {
        self.ctx.gateway.ledger()
    }

    fn restore_ledger(&mut self, ledger: TokenLedger) {
        self.ctx.gateway.restore_ledger(ledger);
    }

    fn ensemble(&self) -> Option<(u32, Vec<RtlCandidate>)> {
        self.validator.ensemble().map(|(g, e)| (g, e.to_vec()))
    }

    fn restore_ensemble(&mut self, generation: u32, ensemble: Vec<RtlCandidate>) {
        self.validator.set_ensemble(generation, ensemble);
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("corrupt run state in {path}: {reason}")]
    CorruptState { path: String, reason: String },
    #[error("run interrupted after {0} transition(s)")]
    Interrupted(usize),
    #[error("fatal: {0}")]
    Fatal(StageError),
    #[error("run directory i/o at {path}: {source}")]
    Io { path: String, source: io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AgentConfig {
    pub i_c_max: u32,
    pub i_r_max: u32,
    /// Stop with [`AgentError::Interrupted`] after this many transitions in
    /// one call (used to exercise resume).
    pub max_transitions: Option<usize>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self { i_c_max: DEFAULT_I_C_MAX, i_r_max: DEFAULT_I_R_MAX, max_transitions: None }
    }
}

/// Layout of one run directory.
#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn gen_dir(&self, generation: u32) -> PathBuf {
        self.root.join(format!("gen{generation}"))
    }

    pub fn rev_dir(&self, generation: u32, revision: u32) -> PathBuf {
        self.gen_dir(generation).join(format!("rev{revision}"))
    }

    fn io(path: &Path, source: io::Error) -> AgentError {
        AgentError::Io { path: path.display().to_string(), source }
    }

    pub fn write_json<T: Serialize>(&self, path: &Path, value: &T) -> Result<(), AgentError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Self::io(parent, e))?;
        }
        let mut text = serde_json::to_string_pretty(value).expect("serializable");
        text.push('\n');
        crate::llm::write_atomic(path, text.as_bytes()).map_err(|e| Self::io(path, e))
    }

    pub fn read_json<T: DeserializeOwned>(&self, path: &Path) -> Result<T, AgentError> {
        let text = fs::read_to_string(path).map_err(|e| AgentError::CorruptState {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        serde_json::from_str(&text)
            .map_err(|e| AgentError::CorruptState { path: path.display().to_string(), reason: e.to_string() })
    }

    pub fn save_state(&self, state: &AgentState) -> Result<(), AgentError> {
        self.write_json(&self.root.join(STATE_FILE), state)
    }

    pub fn load_state(&self) -> Result<AgentState, AgentError> {
        self.read_json(&self.root.join(STATE_FILE))
    }

    pub fn save_testbench(&self, tb: &Testbench) -> Result<(), AgentError> {
        let dir = self.rev_dir(tb.generation, tb.revision);
        tb.save(&dir).map_err(|e| AgentError::Io { path: dir.display().to_string(), source: io::Error::other(e.to_string()) })
    }

    pub fn load_testbench(&self, generation: u32, revision: u32) -> Result<Testbench, AgentError> {
        let dir = self.rev_dir(generation, revision);
        Testbench::load(&dir).map_err(|e| AgentError::CorruptState { path: dir.display().to_string(), reason: e.to_string() })
    }

    pub fn save_report(&self, tb: &Testbench, report: &ValidationReport) -> Result<(), AgentError> {
        let dir = self.rev_dir(tb.generation, tb.revision);
        self.write_json(&dir.join("report.json"), report)?;
        self.write_json(&dir.join("matrix.json"), &report.matrix)
    }

    pub fn load_report(&self, generation: u32, revision: u32) -> Result<ValidationReport, AgentError> {
        self.read_json(&self.rev_dir(generation, revision).join("report.json"))
    }

    pub fn save_transcript(&self, tb: &Testbench, transcript: &[TranscriptEntry]) -> Result<(), AgentError> {
        self.write_json(&self.rev_dir(tb.generation, tb.revision).join("transcript.json"), &transcript)
    }

    pub fn save_ensemble(&self, generation: u32, ensemble: &[RtlCandidate]) -> Result<(), AgentError> {
        self.write_json(&self.gen_dir(generation).join("ensemble.json"), &ensemble)
    }

    pub fn load_ensemble(&self, generation: u32) -> Option<Vec<RtlCandidate>> {
        self.read_json(&self.gen_dir(generation).join("ensemble.json")).ok()
    }

    pub fn save_result(&self, result: &RunResult) -> Result<(), AgentError> {
        self.write_json(&self.root.join(RESULT_FILE), result)
    }

    pub fn load_result(&self) -> Result<RunResult, AgentError> {
        self.read_json(&self.root.join(RESULT_FILE))
    }
}

#[derive(Serialize)]
struct Timing<'a> {
    problem_id: &'a str,
    transitions: Vec<TimingEntry<'a>>,
}

#[derive(Serialize)]
struct TimingEntry<'a> {
    seq: u32,
    action: HistoryAction,
    at: &'a str,
}

fn result_of(state: &AgentState, final_testbench: Option<Testbench>) -> RunResult {
    let n = |a| state.count(a) as u32;
    let counts = ActionCounts {
        generate: n(HistoryAction::Generate),
        correct: n(HistoryAction::Correct),
        reboot: n(HistoryAction::Reboot),
        pass: n(HistoryAction::Pass),
        stage_error: n(HistoryAction::StageError),
    };
    RunResult {
        problem_id: state.problem_id.clone(),
        final_testbench,
        final_verdict: state.last_verdict,
        gave_up: state.gave_up,
        generations: counts.generate + counts.reboot,
        corrections: counts.correct,
        total_actions: counts,
        history: state.history.clone(),
        token_ledger: state.ledger.clone(),
    }
}

/// A stage failed without being fatal: spend a reboot if one is left,
/// otherwise give up with a pass.
fn after_failure(state: &mut AgentState, err: &StageError) {
    let lineage = state.current.unwrap_or((state.i_r, 0));
    state.push(HistoryAction::StageError, None, lineage, Some(err.to_string()));
    if state.i_r < state.i_r_max {
        state.i_r += 1;
        state.i_c = 0;
        state.action = Action::Rebooting;
        state.phase = Phase::Generate;
    } else {
        state.action = Action::Pass;
        state.gave_up = true;
        state.push(HistoryAction::Pass, state.last_verdict, lineage, None);
        state.phase = Phase::Done;
    }
}

fn step(state: &mut AgentState, spec: &TaskSpec, stages: &mut dyn Stages, store: &RunStore) -> Result<(), AgentError> {
    match state.phase {
        Phase::Generate => {
            let generation = state.i_r;
            let kind = if generation == 0 { HistoryAction::Generate } else { HistoryAction::Reboot };
            match stages.generate(spec, generation) {
                Ok(tb) => {
                    store.save_testbench(&tb)?;
                    state.current = Some((tb.generation, tb.revision));
                    state.push(kind, state.last_verdict, (tb.generation, tb.revision), None);
                    state.phase = Phase::Validate;
                }
                Err(e) if e.fatal => return Err(AgentError::Fatal(e)),
                Err(e) => {
                    state.current = None;
                    after_failure(state, &e);
                }
            }
        }
        Phase::Validate => {
            let (g, r) = state.current.ok_or_else(|| corrupt(store, "validate phase without a testbench"))?;
            let tb = store.load_testbench(g, r)?;
            match stages.validate(spec, &tb) {
                Ok(report) => {
                    store.save_report(&tb, &report)?;
                    if let Some((eg, ens)) = stages.ensemble() {
                        if eg == g {
                            store.save_ensemble(g, &ens)?;
                        }
                    }
                    state.last_verdict = Some(report.verdict);
                    let action = decide(state, report.verdict);
                    state.action = action;
                    match action {
                        Action::Pass => {
                            state.gave_up = !report.verdict;
                            state.push(HistoryAction::Pass, Some(report.verdict), (g, r), None);
                            state.phase = Phase::Done;
                        }
                        Action::Correcting => {
                            state.i_c += 1;
                            state.phase = Phase::Correct;
                        }
                        Action::Rebooting => {
                            state.i_r += 1;
                            state.i_c = 0;
                            state.phase = Phase::Generate;
                        }
                        Action::None => unreachable!("decide never returns None"),
                    }
                }
                Err(e) if e.fatal => return Err(AgentError::Fatal(e)),
                Err(e) => after_failure(state, &e),
            }
        }
        Phase::Correct => {
            let (g, r) = state.current.ok_or_else(|| corrupt(store, "correct phase without a testbench"))?;
            let tb = store.load_testbench(g, r)?;
            let report = store.load_report(g, r)?;
            match stages.correct(spec, &tb, &report) {
                Ok(c) => {
                    store.save_testbench(&c.testbench)?;
                    store.save_transcript(&c.testbench, &c.transcript)?;
                    store.write_json(
                        &store.rev_dir(c.testbench.generation, c.testbench.revision).join("diagnosis.json"),
                        &c.diagnosis,
                    )?;
                    state.current = Some((c.testbench.generation, c.testbench.revision));
                    state.push(HistoryAction::Correct, Some(false), (c.testbench.generation, c.testbench.revision), None);
                    state.phase = Phase::Validate;
                }
                Err(e) if e.fatal => return Err(AgentError::Fatal(e)),
                Err(e) => after_failure(state, &e),
            }
        }
        Phase::Done => {}
    }
    Ok(())
}

fn corrupt(store: &RunStore, reason: &str) -> AgentError {
    AgentError::CorruptState { path: store.root.join(STATE_FILE).display().to_string(), reason: reason.into() }
}

fn drive(
    mut state: AgentState,
    spec: &TaskSpec,
    config: &AgentConfig,
    stages: &mut dyn Stages,
    store: &RunStore,
) -> Result<RunResult, AgentError> {
    let mut transitions = 0;
    while state.phase != Phase::Done {
        if config.max_transitions.is_some_and(|m| transitions >= m) {
            return Err(AgentError::Interrupted(transitions));
        }
        step(&mut state, spec, stages, store)?;
        state.ledger = stages.ledger();
        store.save_state(&state)?;
        transitions += 1;
    }
    let final_tb = match state.current {
        Some((g, r)) => Some(store.load_testbench(g, r)?),
        None => None,
    };
    let result = result_of(&state, final_tb);
    store.save_result(&result)?;
    let timing = Timing {
        problem_id: &state.problem_id,
        transitions: state
            .history
            .iter()
            .zip(&state.wall_clock)
            .map(|(h, at)| TimingEntry { seq: h.seq, action: h.action, at })
            .collect(),
    };
    store.write_json(&store.root.join(TIMING_FILE), &timing)?;
    Ok(result)
}

/// Runs the loop from scratch in `store`.
pub fn run_task(
    spec: &TaskSpec,
    config: &AgentConfig,
    stages: &mut dyn Stages,
    store: &RunStore,
) -> Result<RunResult, AgentError> {
    let state = AgentState::new(&spec.problem_id, config.i_c_max, config.i_r_max);
    store.save_state(&state)?;
    drive(state, spec, config, stages, store)
}

/// Continues a persisted run from its last completed transition. A finished
/// run returns its stored result without doing anything.
pub fn resume(
    spec: &TaskSpec,
    config: &AgentConfig,
    stages: &mut dyn Stages,
    store: &RunStore,
) -> Result<RunResult, AgentError> {
    let state = store.load_state()?;
    if state.problem_id != spec.problem_id {
        return Err(corrupt(store, &format!("state belongs to task '{}'", state.problem_id)));
    }
    if state.phase == Phase::Done {
        return store.load_result();
    }
    stages.restore_ledger(state.ledger.clone());
    if let Some((g, _)) = state.current {
        if let Some(ens) = store.load_ensemble(g) {
            stages.restore_ensemble(g, ens);
        }
    }
    drive(state, spec, config, stages, store)
}
