mod common;

use proptest::prelude::*;
use tbloop_core::agent::{
    resume, AgentError, HistoryAction, LlmStages, Phase, StageError, RESULT_FILE, STATE_FILE,
};
use tbloop_core::corrector::{Correction, Diagnosis};
use tbloop_core::llm::LlmSettings;
use tbloop_core::validator::{EnsembleValidator, MatrixRow};
use tbloop_core::{
    classify, decide, run_task, Action, AgentConfig, AgentState, Criterion, RsMatrix, RunResult, RunStore, Stages,
    StageContext, TaskSpec, Testbench, ValidationReport,
};

use common::{fixture, reference_testbench, replay_gateway};

fn report(verdict: bool) -> ValidationReport {
    let cells = vec![verdict, true];
    classify(&RsMatrix::new(2, vec![MatrixRow::valid(0, cells)]).unwrap(), &Criterion::wrong100()).unwrap()
}

/// Scripted stages: verdicts are consumed in order (false once exhausted),
/// and `fail_generate` lists generation indexes whose generation fails.
struct Stub {
    verdicts: Vec<bool>,
    next: usize,
    fail_generate: Vec<(u32, bool)>,
    calls: usize,
}

impl Stub {
    fn new(verdicts: Vec<bool>) -> Self {
        Self { verdicts, next: 0, fail_generate: Vec::new(), calls: 0 }
    }

    fn always(v: bool) -> Self {
        Self::new(vec![v; 1000])
    }

    fn tb(generation: u32, revision: u32) -> Testbench {
        Testbench { generation, revision, ..reference_testbench("and_gate") }
    }
}

impl Stages for Stub {
    fn generate(&mut self, _spec: &TaskSpec, generation: u32) -> Result<Testbench, StageError> {
        self.calls += 1;
        if let Some(&(_, fatal)) = self.fail_generate.iter().find(|(g, _)| *g == generation) {
            return Err(StageError { stage: "generate", message: "stub failure".into(), fatal });
        }
        Ok(Self::tb(generation, 0))
    }

    fn validate(&mut self, _spec: &TaskSpec, _tb: &Testbench) -> Result<ValidationReport, StageError> {
        self.calls += 1;
        let v = self.verdicts.get(self.next).copied().unwrap_or(false);
        self.next += 1;
        Ok(report(v))
    }

    fn correct(&mut self, _spec: &TaskSpec, tb: &Testbench, _r: &ValidationReport) -> Result<Correction, StageError> {
        self.calls += 1;
        Ok(Correction {
            testbench: Self::tb(tb.generation, tb.revision + 1),
            diagnosis: Diagnosis { why: "w".into(), where_: "x".into(), how: "h".into() },
            transcript: Vec::new(),
        })
    }
}

fn spec() -> TaskSpec {
    fixture("and_gate").spec
}

fn cfg(i_c_max: u32, i_r_max: u32) -> AgentConfig {
    AgentConfig { i_c_max, i_r_max, max_transitions: None }
}

fn run(stub: &mut Stub, config: AgentConfig) -> (RunResult, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let result = run_task(&spec(), &config, stub, &RunStore::new(dir.path())).unwrap();
    (result, dir)
}

fn actions(r: &RunResult) -> Vec<HistoryAction> {
    r.history.iter().map(|h| h.action).collect()
}

#[test]
fn decide_table_is_exhaustive() {
    for i_c_max in 0..4 {
        for i_r_max in 0..4 {
            for i_c in 0..=i_c_max {
                for i_r in 0..=i_r_max {
                    let s = AgentState { i_c, i_r, ..AgentState::new("t", i_c_max, i_r_max) };
                    assert_eq!(decide(&s, true), Action::Pass);
                    let expected = if i_c < i_c_max {
                        Action::Correcting
                    } else if i_r < i_r_max {
                        Action::Rebooting
                    } else {
                        Action::Pass
                    };
                    assert_eq!(decide(&s, false), expected, "i_c={i_c}/{i_c_max} i_r={i_r}/{i_r_max}");
                }
            }
        }
    }
}

#[test]
fn immediate_true_verdict_passes() {
    let (r, _dir) = run(&mut Stub::always(true), AgentConfig::default());
    assert_eq!(actions(&r), [HistoryAction::Generate, HistoryAction::Pass]);
    assert_eq!(r.final_verdict, Some(true));
    assert!(!r.gave_up);
    assert_eq!((r.generations, r.corrections), (1, 0));
}

#[test]
fn always_false_exhausts_both_budgets() {
    let mut stub = Stub::always(false);
    let (r, _dir) = run(&mut stub, AgentConfig::default());
    assert_eq!(r.generations, 11);
    assert_eq!(r.corrections, 33);
    assert_eq!(r.total_actions.reboot, 10);
    assert_eq!(r.total_actions.pass, 1);
    assert!(r.gave_up);
    assert_eq!(r.final_verdict, Some(false));
    assert_eq!(stub.next, 44, "one validation per testbench");
    let last = r.final_testbench.unwrap();
    assert_eq!((last.generation, last.revision), (10, 3));
}

#[test]
fn false_once_then_true_needs_one_correction() {
    let (r, _dir) = run(&mut Stub::new(vec![false, true]), AgentConfig::default());
    assert_eq!(actions(&r), [HistoryAction::Generate, HistoryAction::Correct, HistoryAction::Pass]);
    assert!(!r.gave_up);
    let tb = r.final_testbench.unwrap();
    assert_eq!((tb.generation, tb.revision), (0, 1));
}

#[test]
fn zero_budgets_pass_after_one_validation() {
    let (r, _dir) = run(&mut Stub::always(false), cfg(0, 0));
    assert_eq!(actions(&r), [HistoryAction::Generate, HistoryAction::Pass]);
    assert!(r.gave_up);
}

#[test]
fn history_is_sequenced_and_persisted() {
    let (r, dir) = run(&mut Stub::new(vec![false, false, false, false, true]), AgentConfig::default());
    assert_eq!(r.history.iter().map(|h| h.seq).collect::<Vec<_>>(), (0..r.history.len() as u32).collect::<Vec<_>>());
    let store = RunStore::new(dir.path());
    assert_eq!(store.load_result().unwrap(), r);
    let state = store.load_state().unwrap();
    assert_eq!(state.phase, Phase::Done);
    assert_eq!(state.wall_clock.len(), state.history.len());
    assert!(dir.path().join("timing.json").is_file());
    // the reboot after three corrections starts generation 1
    assert_eq!(r.history[4].action, HistoryAction::Reboot);
    assert_eq!((r.history[4].generation, r.history[4].revision), (1, 0));
    assert!(store.rev_dir(0, 3).join("report.json").is_file());
    assert!(store.rev_dir(0, 1).join("diagnosis.json").is_file());
}

#[test]
fn non_fatal_stage_error_spends_a_reboot() {
    let mut stub = Stub::always(true);
    stub.fail_generate = vec![(0, false)];
    let (r, _dir) = run(&mut stub, AgentConfig::default());
    assert_eq!(actions(&r), [HistoryAction::StageError, HistoryAction::Reboot, HistoryAction::Pass]);
    assert!(r.history[0].note.as_deref().unwrap().contains("stub failure"));
    assert!(!r.gave_up);

    let mut stub = Stub::always(true);
    stub.fail_generate = vec![(0, false)];
    let (r, _dir) = run(&mut stub, cfg(3, 0));
    assert_eq!(actions(&r), [HistoryAction::StageError, HistoryAction::Pass]);
    assert!(r.gave_up);
    assert_eq!(r.final_testbench, None);
    assert_eq!(r.final_verdict, None);
}

#[test]
fn fatal_stage_error_aborts() {
    let mut stub = Stub::always(true);
    stub.fail_generate = vec![(0, true)];
    let dir = tempfile::tempdir().unwrap();
    let err = run_task(&spec(), &AgentConfig::default(), &mut stub, &RunStore::new(dir.path())).unwrap_err();
    assert!(matches!(err, AgentError::Fatal(StageError { fatal: true, .. })), "{err}");
    assert!(!dir.path().join(RESULT_FILE).exists());
}

#[test]
fn interrupted_run_resumes_to_the_same_result() {
    let reference = tempfile::tempdir().unwrap();
    run_task(&spec(), &AgentConfig::default(), &mut Stub::always(false), &RunStore::new(reference.path())).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::new(dir.path());
    // generate, validate, correct, validate, correct
    let cut = AgentConfig { max_transitions: Some(5), ..AgentConfig::default() };
    let err = run_task(&spec(), &cut, &mut Stub::always(false), &store).unwrap_err();
    assert!(matches!(err, AgentError::Interrupted(5)));
    let state = store.load_state().unwrap();
    assert_eq!((state.i_c, state.phase, state.current), (2, Phase::Validate, Some((0, 2))));
    assert!(!dir.path().join(RESULT_FILE).exists());

    resume(&spec(), &AgentConfig::default(), &mut Stub::always(false), &store).unwrap();
    let a = std::fs::read(reference.path().join(RESULT_FILE)).unwrap();
    let b = std::fs::read(dir.path().join(RESULT_FILE)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn resuming_a_finished_run_does_nothing() {
    let (first, dir) = run(&mut Stub::new(vec![false, true]), AgentConfig::default());
    let mut stub = Stub::always(false);
    let again = resume(&spec(), &AgentConfig::default(), &mut stub, &RunStore::new(dir.path())).unwrap();
    assert_eq!(again, first);
    assert_eq!(stub.calls, 0);
}

#[test]
fn resume_rejects_missing_or_foreign_state() {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::new(dir.path());
    let err = resume(&spec(), &AgentConfig::default(), &mut Stub::always(true), &store).unwrap_err();
    assert!(matches!(err, AgentError::CorruptState { .. }), "{err}");

    std::fs::write(dir.path().join(STATE_FILE), "{ not json").unwrap();
    let err = resume(&spec(), &AgentConfig::default(), &mut Stub::always(true), &store).unwrap_err();
    assert!(matches!(err, AgentError::CorruptState { .. }));

    store.save_state(&AgentState::new("someone_else", 3, 10)).unwrap();
    let err = resume(&spec(), &AgentConfig::default(), &mut Stub::always(true), &store).unwrap_err();
    assert!(matches!(err, AgentError::CorruptState { .. }));
}

#[test]
fn adder_fixture_is_corrected_once_under_replay() {
    let sim = require_sim!();
    let gw = replay_gateway("adder4_fix");
    let settings = LlmSettings::default();
    let ctx = StageContext::new(&gw, &settings, &sim);
    let mut stages = LlmStages::new(ctx, EnsembleValidator::new(Criterion::wrong70(), 4));
    let dir = tempfile::tempdir().unwrap();
    let r = run_task(&fixture("adder4_fix").spec, &AgentConfig::default(), &mut stages, &RunStore::new(dir.path()))
        .unwrap();
    assert_eq!(actions(&r), [HistoryAction::Generate, HistoryAction::Correct, HistoryAction::Pass]);
    assert_eq!(r.final_verdict, Some(true));
    assert!(r.token_ledger.total().calls > 0);
    assert!(dir.path().join("gen0/ensemble.json").is_file());
}

proptest! {
    #[test]
    fn loop_respects_its_budgets(
        i_c_max in 0u32..4,
        i_r_max in 0u32..4,
        verdicts in prop::collection::vec(prop::bool::weighted(0.15), 0..40),
    ) {
        let (r, _dir) = run(&mut Stub::new(verdicts.clone()), cfg(i_c_max, i_r_max));
        prop_assert!(r.generations <= i_r_max + 1);
        prop_assert!(r.corrections <= i_c_max * (i_r_max + 1));
        prop_assert_eq!(r.total_actions.pass, 1);
        prop_assert_eq!(r.history.last().unwrap().action, HistoryAction::Pass);
        prop_assert_eq!(r.gave_up, r.final_verdict != Some(true));

        // the run stops at the first true verdict; validations = testbenches
        let validations = (r.generations + r.corrections) as usize;
        let first_true = verdicts.iter().position(|&v| v);
        match first_true {
            Some(k) if k + 1 < validations => prop_assert!(false, "ran past a true verdict"),
            Some(k) if k + 1 == validations => prop_assert!(!r.gave_up),
            _ => prop_assert!(r.gave_up),
        }

        // corrections per generation stay within budget and count revisions up
        let mut per_gen = 0;
        for h in &r.history {
            match h.action {
                HistoryAction::Generate | HistoryAction::Reboot => {
                    per_gen = 0;
                    prop_assert_eq!(h.revision, 0);
                }
                HistoryAction::Correct => {
                    per_gen += 1;
                    prop_assert_eq!(h.revision, per_gen);
                    prop_assert!(per_gen <= i_c_max);
                }
                _ => {}
            }
        }
    }
}
