//! Graded evaluation of a finished testbench against a golden RTL and its
//! mutants.
//!
//! Levels: `eval0` (driver and checker are syntax-clean), `eval1` (the golden
//! RTL passes every scenario), `eval2` (the pass/fail report on each mutant
//! matches the expected report on at least the agreement threshold of them).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixed;
use crate::sim::{CheckerError, RtlCandidate, RtlOrigin, SimError, SimRun, Simulator};
use crate::task::CircuitKind;
use crate::testbench::Testbench;

pub const DEFAULT_AGREEMENT: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Report {
    Passed,
    Failed,
}

impl Report {
    pub fn of(run: &SimRun) -> Self {
        if run.all_passed() {
            Report::Passed
        } else {
            Report::Failed
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("eval bundle has no mutants")]
    NoMutants,
    #[error("{got} expected verdicts for {mutants} mutants")]
    VerdictCount { got: usize, mutants: usize },
    #[error("agreement threshold {0} is outside [0, 1]")]
    Threshold(f64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalBundle {
    pub golden: RtlCandidate,
    pub mutants: Vec<RtlCandidate>,
    pub expected_mutant_verdicts: Vec<Report>,
}

impl EvalBundle {
    /// Builds a bundle; expected verdicts default to `Failed` for every
    /// mutant.
    pub fn new(golden: String, mutants: Vec<String>, expected: Option<Vec<Report>>) -> Result<Self, EvalError> {
        if mutants.is_empty() {
            return Err(EvalError::NoMutants);
        }
        let expected = expected.unwrap_or_else(|| vec![Report::Failed; mutants.len()]);
        if expected.len() != mutants.len() {
            return Err(EvalError::VerdictCount { got: expected.len(), mutants: mutants.len() });
        }
        Ok(Self {
            golden: RtlCandidate::new(golden, RtlOrigin::Golden, 0),
            mutants: mutants
                .into_iter()
                .enumerate()
                .map(|(i, m)| RtlCandidate::new(m, RtlOrigin::Mutant, i))
                .collect(),
            expected_mutant_verdicts: expected,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalLevel {
    Failed,
    Eval0,
    Eval1,
    Eval2,
}

impl EvalLevel {
    pub fn reaches(self, level: EvalLevel) -> bool {
        self >= level
    }
}

impl fmt::Display for EvalLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalLevel::Failed => "failed",
            EvalLevel::Eval0 => "eval0",
            EvalLevel::Eval1 => "eval1",
            EvalLevel::Eval2 => "eval2",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutantComparison {
    pub index: usize,
    pub expected: Report,
    pub observed: Report,
}

impl MutantComparison {
    pub fn matches(&self) -> bool {
        self.expected == self.observed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalVerdict {
    pub level: EvalLevel,
    /// Defined only once eval1 holds.
    #[serde(with = "fixed::option")]
    pub mutant_agreement: Option<f64>,
    pub details: Vec<MutantComparison>,
}

/// Driver compiles against a stub DUT and the checker survives an
/// empty-dump probe.
pub fn eval0(sim: &Simulator, testbench: &Testbench) -> Result<bool, SimError> {
    if !sim.check_driver(&testbench.driver_source, &testbench.module_header)?.ok {
        return Ok(false);
    }
    match sim.probe_checker(&testbench.checker_source, testbench.n_scenarios()) {
        Ok(()) => Ok(true),
        Err(CheckerError::Io(e)) => Err(SimError::Io(e)),
        Err(_) => Ok(false),
    }
}

/// The golden RTL passes every scenario.
pub fn eval1(sim: &Simulator, testbench: &Testbench, bundle: &EvalBundle) -> Result<bool, SimError> {
    Ok(sim.simulate_matrix_row(testbench, &bundle.golden)?.all_passed())
}

/// Aggregate report per mutant. A mutant that fails to compile reports
/// `Failed`, as a real testbench would reject it.
pub fn mutant_reports(sim: &Simulator, testbench: &Testbench, bundle: &EvalBundle) -> Result<Vec<Report>, SimError> {
    Ok(sim.simulate_rows(testbench, &bundle.mutants)?.iter().map(Report::of).collect())
}

/// Pure agreement arithmetic: comparisons, fraction of matches, and whether
/// it reaches `threshold` (inclusive).
pub fn compare_reports(
    observed: &[Report],
    expected: &[Report],
    threshold: f64,
) -> Result<(Vec<MutantComparison>, f64, bool), EvalError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(EvalError::Threshold(threshold));
    }
    if observed.is_empty() {
        return Err(EvalError::NoMutants);
    }
    if observed.len() != expected.len() {
        return Err(EvalError::VerdictCount { got: expected.len(), mutants: observed.len() });
    }
    let details: Vec<MutantComparison> = observed
        .iter()
        .zip(expected)
        .enumerate()
        .map(|(index, (&observed, &expected))| MutantComparison { index, expected, observed })
        .collect();
    let matches = details.iter().filter(|d| d.matches()).count();
    let agreement = matches as f64 / details.len() as f64;
    Ok((details, agreement, agreement >= threshold))
}

/// The full eval0 → eval1 → eval2 cascade.
pub fn evaluate(
    sim: &Simulator,
    testbench: &Testbench,
    bundle: &EvalBundle,
    threshold: f64,
) -> Result<EvalVerdict, EvalRunError> {
    let failed = |level| EvalVerdict { level, mutant_agreement: None, details: Vec::new() };
    if !eval0(sim, testbench)? {
        return Ok(failed(EvalLevel::Failed));
    }
    if !eval1(sim, testbench, bundle)? {
        return Ok(failed(EvalLevel::Eval0));
    }
    let observed = mutant_reports(sim, testbench, bundle)?;
    let (details, agreement, pass) = compare_reports(&observed, &bundle.expected_mutant_verdicts, threshold)?;
    Ok(EvalVerdict {
        level: if pass { EvalLevel::Eval2 } else { EvalLevel::Eval1 },
        mutant_agreement: Some(agreement),
        details,
    })
}

#[derive(Debug, Error)]
pub enum EvalRunError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeRow {
    pub group: String,
    pub n_tasks: usize,
    #[serde(with = "fixed::option")]
    pub eval0: Option<f64>,
    #[serde(with = "fixed::option")]
    pub eval1: Option<f64>,
    #[serde(with = "fixed::option")]
    pub eval2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeTable {
    pub rows: Vec<GradeRow>,
}

fn grade_row(group: &str, levels: &[EvalLevel]) -> GradeRow {
    let ratio = |l: EvalLevel| {
        (!levels.is_empty()).then(|| levels.iter().filter(|x| x.reaches(l)).count() as f64 / levels.len() as f64)
    };
    GradeRow {
        group: group.to_string(),
        n_tasks: levels.len(),
        eval0: ratio(EvalLevel::Eval0),
        eval1: ratio(EvalLevel::Eval1),
        eval2: ratio(EvalLevel::Eval2),
    }
}

/// Pass ratios per level for Total, CMB and SEQ. An empty group reports
/// `None` rather than zero.
pub fn grade_suite(results: &[(CircuitKind, EvalLevel)]) -> GradeTable {
    let of = |k: CircuitKind| results.iter().filter(|r| r.0 == k).map(|r| r.1).collect::<Vec<_>>();
    let all: Vec<EvalLevel> = results.iter().map(|r| r.1).collect();
    GradeTable {
        rows: vec![
            grade_row("Total", &all),
            grade_row(CircuitKind::Combinational.group(), &of(CircuitKind::Combinational)),
            grade_row(CircuitKind::Sequential.group(), &of(CircuitKind::Sequential)),
        ],
    }
}

impl fmt::Display for GradeTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{:.2}", v * 100.0));
        writeln!(f, "{:<6} {:>7} {:>9} {:>9} {:>9}", "group", "#tasks", "eval0(%)", "eval1(%)", "eval2(%)")?;
        for r in &self.rows {
            writeln!(f, "{:<6} {:>7} {:>9} {:>9} {:>9}", r.group, r.n_tasks, pct(r.eval0), pct(r.eval1), pct(r.eval2))?;
        }
        Ok(())
    }
}
