//! Functional self-validation: simulate an ensemble of model-written RTL
//! candidates against the testbench, collect the RTL-Scenario matrix, and
//! classify each scenario (and the testbench) from the column statistics.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::StageContext;
use crate::generator::llm_fatal;
use crate::llm::{extract_code_block, LlmError};
use crate::prompts::{Template, TemplateError};
use crate::sim::{parallel_map, RtlCandidate, RtlOrigin, SimError, SimRun, Simulator};
use crate::task::TaskSpec;
use crate::testbench::Testbench;

pub const DEFAULT_N_RTL: usize = 20;
pub const REFILL_ROUNDS: u32 = 3;
pub const UNCERTAIN_LOW: f64 = 0.30;
pub const GREEN_ROW_THRESHOLD: f64 = 0.25;

#[derive(Debug, Error)]
pub enum ValidateError {
    #[error("matrix has no valid rows")]
    NoValidRows,
    #[error("only {valid} of {n_rtl} RTL candidates compile after {rounds} refill round(s)")]
    EnsembleExhausted { valid: usize, n_rtl: usize, rounds: u32 },
    #[error("ensemble size must be at least 2 (got {0})")]
    EnsembleTooSmall(usize),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

impl ValidateError {
    pub fn is_fatal(&self) -> bool {
        match self {
            ValidateError::Llm(e) => llm_fatal(e),
            ValidateError::Sim(SimError::ToolMissing { .. }) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MatrixError {
    #[error("row {row}: valid row has {got} cells, expected {expected}")]
    CellCount { row: usize, got: usize, expected: usize },
    #[error("row {0}: invalid row carries cells")]
    InvalidWithCells(usize),
    #[error("n_rtl is {declared} but {actual} rows are present")]
    RowCount { declared: usize, actual: usize },
    #[error("matrix JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub rtl_index: usize,
    pub valid: bool,
    /// true = pass (green), false = fail (red). Empty for invalid rows.
    pub cells: Vec<bool>,
}

impl MatrixRow {
    pub fn valid(rtl_index: usize, cells: Vec<bool>) -> Self {
        Self { rtl_index, valid: true, cells }
    }

    pub fn invalid(rtl_index: usize) -> Self {
        Self { rtl_index, valid: false, cells: Vec::new() }
    }

    pub fn all_green(&self) -> bool {
        self.valid && self.cells.iter().all(|&c| c)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RsMatrix {
    pub n_rtl: usize,
    pub n_scenarios: usize,
    pub rows: Vec<MatrixRow>,
}

impl RsMatrix {
    pub fn new(n_scenarios: usize, rows: Vec<MatrixRow>) -> Result<Self, MatrixError> {
        let m = Self { n_rtl: rows.len(), n_scenarios, rows };
        m.check()?;
        Ok(m)
    }

    pub fn check(&self) -> Result<(), MatrixError> {
        if self.rows.len() != self.n_rtl {
            return Err(MatrixError::RowCount { declared: self.n_rtl, actual: self.rows.len() });
        }
        for (i, r) in self.rows.iter().enumerate() {
            if r.valid && r.cells.len() != self.n_scenarios {
                return Err(MatrixError::CellCount { row: i, got: r.cells.len(), expected: self.n_scenarios });
            }
            if !r.valid && !r.cells.is_empty() {
                return Err(MatrixError::InvalidWithCells(i));
            }
        }
        Ok(())
    }

    pub fn from_runs(n_scenarios: usize, runs: &[SimRun]) -> Result<Self, MatrixError> {
        let rows = runs
            .iter()
            .map(|r| {
                if r.valid() && r.outcomes.len() == n_scenarios {
                    MatrixRow::valid(r.rtl_index, r.outcomes.iter().map(|o| o.passed).collect())
                } else {
                    MatrixRow::invalid(r.rtl_index)
                }
            })
            .collect();
        Self::new(n_scenarios, rows)
    }

    pub fn valid_rows(&self) -> impl Iterator<Item = &MatrixRow> {
        self.rows.iter().filter(|r| r.valid)
    }

    pub fn n_valid(&self) -> usize {
        self.valid_rows().count()
    }

    pub fn without_invalid(&self) -> Self {
        let rows: Vec<MatrixRow> = self.valid_rows().cloned().collect();
        Self { n_rtl: rows.len(), n_scenarios: self.n_scenarios, rows }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("matrix serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, MatrixError> {
        let m: Self = serde_json::from_str(text).map_err(|e| MatrixError::Json(e.to_string()))?;
        m.check()?;
        Ok(m)
    }

    /// Compact rendering: one line per row, `G`/`R` per cell, `-` for invalid.
    pub fn render(&self) -> String {
        self.rows
            .iter()
            .map(|r| {
                if r.valid {
                    r.cells.iter().map(|&c| if c { 'G' } else { 'R' }).collect()
                } else {
                    "-".to_string()
                }
            })
            .collect::<Vec<String>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionKind {
    Wrong100,
    Wrong70,
    Wrong50,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub kind: CriterionKind,
    /// A scenario is wrong when its red fraction is at least this.
    pub wrong_threshold: f64,
    /// Testbench judged correct when the fully-green fraction exceeds this;
    /// `None` disables the override.
    pub green_row_threshold: Option<f64>,
    /// A scenario is correct when its red fraction is at most this.
    pub uncertain_low: f64,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid criterion: {0}")]
pub struct CriterionError(String);

impl Criterion {
    pub fn wrong100() -> Self {
        Self { kind: CriterionKind::Wrong100, wrong_threshold: 1.0, green_row_threshold: None, uncertain_low: UNCERTAIN_LOW }
    }

    pub fn wrong70() -> Self {
        Self {
            kind: CriterionKind::Wrong70,
            wrong_threshold: 0.7,
            green_row_threshold: Some(GREEN_ROW_THRESHOLD),
            uncertain_low: UNCERTAIN_LOW,
        }
    }

    pub fn wrong50() -> Self {
        Self {
            kind: CriterionKind::Wrong50,
            wrong_threshold: 0.5,
            green_row_threshold: Some(GREEN_ROW_THRESHOLD),
            uncertain_low: UNCERTAIN_LOW,
        }
    }

    pub fn custom(wrong: f64, green: Option<f64>, uncertain_low: f64) -> Result<Self, CriterionError> {
        let c = Self { kind: CriterionKind::Custom, wrong_threshold: wrong, green_row_threshold: green, uncertain_low };
        c.validate()?;
        Ok(c)
    }

    pub fn named() -> [Criterion; 3] {
        [Self::wrong100(), Self::wrong70(), Self::wrong50()]
    }

    pub fn validate(&self) -> Result<(), CriterionError> {
        let w = self.wrong_threshold;
        if !(w > 0.0 && w <= 1.0) {
            return Err(CriterionError(format!("wrong threshold {w} not in (0, 1]")));
        }
        if !(self.uncertain_low >= 0.0 && self.uncertain_low < w) {
            return Err(CriterionError(format!("uncertain_low {} must be in [0, {w})", self.uncertain_low)));
        }
        if let Some(g) = self.green_row_threshold {
            if !(0.0..=1.0).contains(&g) {
                return Err(CriterionError(format!("green-row threshold {g} not in [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn without_override(mut self) -> Self {
        self.green_row_threshold = None;
        self
    }
}

impl Default for Criterion {
    fn default() -> Self {
        Self::wrong70()
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            CriterionKind::Wrong100 => f.write_str("wrong100"),
            CriterionKind::Wrong70 => f.write_str("wrong70"),
            CriterionKind::Wrong50 => f.write_str("wrong50"),
            CriterionKind::Custom => {
                write!(f, "custom(wrong>={}", self.wrong_threshold)?;
                if let Some(g) = self.green_row_threshold {
                    write!(f, ",green>{g}")?;
                }
                write!(f, ",low<={})", self.uncertain_low)
            }
        }
    }
}

impl FromStr for Criterion {
    type Err = CriterionError;

    /// Accepts `wrong100`, `wrong70`, `wrong50` (also `100%-wrong` style) and
    /// `custom:<wrong>[:<green>|none[:<low>]]`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        match t.as_str() {
            "wrong100" | "100%-wrong" | "100" => return Ok(Self::wrong100()),
            "wrong70" | "70%-wrong" | "70" => return Ok(Self::wrong70()),
            "wrong50" | "50%-wrong" | "50" => return Ok(Self::wrong50()),
            _ => {}
        }
        let Some(rest) = t.strip_prefix("custom:") else {
            return Err(CriterionError(format!("unknown criterion '{s}'")));
        };
        let parts: Vec<&str> = rest.split(':').collect();
        let num = |p: &str| p.parse::<f64>().map_err(|_| CriterionError(format!("bad number '{p}' in '{s}'")));
        let wrong = num(parts[0])?;
        let green = match parts.get(1) {
            None => Some(GREEN_ROW_THRESHOLD),
            Some(&"none") => None,
            Some(p) => Some(num(p)?),
        };
        let low = match parts.get(2) {
            None => UNCERTAIN_LOW.min(wrong / 2.0),
            Some(p) => num(p)?,
        };
        if parts.len() > 3 {
            return Err(CriterionError(format!("too many fields in '{s}'")));
        }
        Self::custom(wrong, green, low)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioClass {
    Correct,
    Wrong,
    Uncertain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// True when the testbench is judged correct.
    pub verdict: bool,
    pub scenario_classes: Vec<ScenarioClass>,
    #[serde(with = "crate::fixed")]
    pub green_row_fraction: f64,
    #[serde(with = "crate::fixed::vec")]
    pub wrong_fractions: Vec<f64>,
    pub green_override: bool,
    pub valid_rows: usize,
    pub criterion: Criterion,
    pub matrix: RsMatrix,
}

impl ValidationReport {
    pub fn indexes_of(&self, class: ScenarioClass) -> Vec<usize> {
        self.scenario_classes.iter().enumerate().filter(|(_, &c)| c == class).map(|(i, _)| i).collect()
    }
}

/// Classifies a matrix. The green-row override is evaluated first and
/// short-circuits; otherwise each column is judged by its red fraction over
/// valid rows.
pub fn classify(matrix: &RsMatrix, criterion: &Criterion) -> Result<ValidationReport, ValidateError> {
    matrix.check()?;
    let valid: Vec<&MatrixRow> = matrix.valid_rows().collect();
    if valid.is_empty() {
        return Err(ValidateError::NoValidRows);
    }
    let n = valid.len() as f64;
    let green = valid.iter().filter(|r| r.all_green()).count() as f64 / n;
    let wrong_fractions: Vec<f64> = (0..matrix.n_scenarios)
        .map(|j| valid.iter().filter(|r| !r.cells[j]).count() as f64 / n)
        .collect();
    let override_fired = criterion.green_row_threshold.is_some_and(|t| green > t);
    let scenario_classes: Vec<ScenarioClass> = if override_fired {
        vec![ScenarioClass::Correct; matrix.n_scenarios]
    } else {
        wrong_fractions
            .iter()
            .map(|&w| {
                if w >= criterion.wrong_threshold {
                    ScenarioClass::Wrong
                } else if w <= criterion.uncertain_low {
                    ScenarioClass::Correct
                } else {
                    ScenarioClass::Uncertain
                }
            })
            .collect()
    };
    let verdict = !scenario_classes.contains(&ScenarioClass::Wrong);
    Ok(ValidationReport {
        verdict,
        scenario_classes,
        green_row_fraction: green,
        wrong_fractions,
        green_override: override_fired,
        valid_rows: valid.len(),
        criterion: *criterion,
        matrix: matrix.clone(),
    })
}

fn rtl_tag(generation: u32, index: usize, round: u32) -> String {
    format!("rtl.g{generation}.i{index}r{round}")
}

fn request_rtl(ctx: &StageContext, spec: &TaskSpec, generation: u32, index: usize, round: u32) -> Result<RtlCandidate, ValidateError> {
    let tag = rtl_tag(generation, index, round);
    let mut conv = ctx.conversation(Template::SystemRtl, &tag)?;
    let prompt = Template::Rtl.render(&[
        ("spec", spec.spec_text.trim()),
        ("header", spec.module_header.trim()),
        ("index", &index.to_string()),
    ])?;
    let reply = conv.ask(&tag, prompt)?;
    Ok(match extract_code_block(&reply, "verilog") {
        Ok(code) => RtlCandidate::new(code, RtlOrigin::LlmGenerated, index),
        // no code at all: keep it as a candidate that cannot compile
        Err(_) => RtlCandidate { syntax_ok: Some(false), ..RtlCandidate::new(String::new(), RtlOrigin::LlmGenerated, index) },
    })
}

fn enough_valid(cands: &[RtlCandidate]) -> bool {
    let valid = cands.iter().filter(|c| c.syntax_ok == Some(true)).count();
    valid * 2 >= cands.len()
}

/// Generates `n_rtl` candidates and probes them. While more than half fail
/// the probe, the failed ones are regenerated, for at most
/// [`REFILL_ROUNDS`] rounds.
pub fn generate_rtl_ensemble(
    ctx: &StageContext,
    spec: &TaskSpec,
    n_rtl: usize,
    generation: u32,
) -> Result<Vec<RtlCandidate>, ValidateError> {
    if n_rtl < 2 {
        return Err(ValidateError::EnsembleTooSmall(n_rtl));
    }
    let fetch = |indexes: &[usize], round: u32| -> Result<Vec<RtlCandidate>, ValidateError> {
        parallel_map(indexes, ctx.llm.max_parallel_requests, |&i| request_rtl(ctx, spec, generation, i, round))
            .into_iter()
            .collect()
    };
    let all: Vec<usize> = (0..n_rtl).collect();
    let mut cands = fetch(&all, 0)?;
    ctx.sim.probe_candidates(&mut cands)?;
    for round in 1..=REFILL_ROUNDS {
        if enough_valid(&cands) {
            return Ok(cands);
        }
        let failed: Vec<usize> = cands.iter().filter(|c| c.syntax_ok != Some(true)).map(|c| c.index).collect();
        for fresh in fetch(&failed, round)? {
            let i = fresh.index;
            cands[i] = fresh;
        }
        ctx.sim.probe_candidates(&mut cands)?;
    }
    if enough_valid(&cands) {
        return Ok(cands);
    }
    let valid = cands.iter().filter(|c| c.syntax_ok == Some(true)).count();
    Err(ValidateError::EnsembleExhausted { valid, n_rtl, rounds: REFILL_ROUNDS })
}

/// One row per candidate; anything that fails along the way is an invalid row.
pub fn build_rs_matrix(sim: &Simulator, testbench: &Testbench, ensemble: &[RtlCandidate]) -> Result<RsMatrix, ValidateError> {
    let runs = sim.simulate_rows(testbench, ensemble)?;
    Ok(RsMatrix::from_runs(testbench.n_scenarios(), &runs)?)
}

/// Validator that builds its ensemble once per generation and reuses it for
/// every revision of that generation.
#[derive(Debug, Clone)]
pub struct EnsembleValidator {
    pub criterion: Criterion,
    pub n_rtl: usize,
    ensemble: Option<(u32, Vec<RtlCandidate>)>,
}

impl EnsembleValidator {
    pub fn new(criterion: Criterion, n_rtl: usize) -> Self {
        Self { criterion, n_rtl, ensemble: None }
    }

    pub fn ensemble(&self) -> Option<(u32, &[RtlCandidate])> {
        self.ensemble.as_ref().map(|(g, e)| (*g, e.as_slice()))
    }

    pub fn set_ensemble(&mut self, generation: u32, ensemble: Vec<RtlCandidate>) {
        self.ensemble = Some((generation, ensemble));
    }

    pub fn ensure_ensemble(&mut self, ctx: &StageContext, spec: &TaskSpec, generation: u32) -> Result<&[RtlCandidate], ValidateError> {
        if self.ensemble.as_ref().map(|(g, _)| *g) != Some(generation) {
            let e = generate_rtl_ensemble(ctx, spec, self.n_rtl, generation)?;
            self.ensemble = Some((generation, e));
        }
        Ok(&self.ensemble.as_ref().expect("just set").1)
    }

    pub fn validate(&mut self, ctx: &StageContext, spec: &TaskSpec, testbench: &Testbench) -> Result<ValidationReport, ValidateError> {
        let criterion = self.criterion;
        let ensemble = self.ensure_ensemble(ctx, spec, testbench.generation)?;
        let matrix = build_rs_matrix(ctx.sim, testbench, ensemble)?;
        classify(&matrix, &criterion)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TbLabel {
    Correct,
    Wrong,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelledMatrix {
    pub name: String,
    pub label: TbLabel,
    pub matrix: RsMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub criterion: String,
    #[serde(with = "crate::fixed::option")]
    pub overall: Option<f64>,
    #[serde(with = "crate::fixed::option")]
    pub on_correct: Option<f64>,
    #[serde(with = "crate::fixed::option")]
    pub on_wrong: Option<f64>,
    pub n_correct: usize,
    pub n_wrong: usize,
}

#[derive(Debug, Error)]
#[error("sweep entry '{name}': {source}")]
pub struct SweepError {
    pub name: String,
    #[source]
    pub source: ValidateError,
}

fn ratio(hits: usize, n: usize) -> Option<f64> {
    (n > 0).then(|| hits as f64 / n as f64)
}

/// Accuracy of each criterion's verdict against the labels, overall and on
/// each label slice. Empty slices are `None`.
pub fn accuracy_sweep(corpus: &[LabelledMatrix], criteria: &[Criterion]) -> Result<Vec<SweepRow>, SweepError> {
    let mut rows = Vec::new();
    for c in criteria {
        let (mut hit_c, mut hit_w) = (0, 0);
        for entry in corpus {
            let report = classify(&entry.matrix, c).map_err(|source| SweepError { name: entry.name.clone(), source })?;
            match (entry.label, report.verdict) {
                (TbLabel::Correct, true) => hit_c += 1,
                (TbLabel::Wrong, false) => hit_w += 1,
                _ => {}
            }
        }
        let n_correct = corpus.iter().filter(|e| e.label == TbLabel::Correct).count();
        let n_wrong = corpus.len() - n_correct;
        rows.push(SweepRow {
            criterion: c.to_string(),
            overall: ratio(hit_c + hit_w, corpus.len()),
            on_correct: ratio(hit_c, n_correct),
            on_wrong: ratio(hit_w, n_wrong),
            n_correct,
            n_wrong,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&str]) -> RsMatrix {
        let n_s = rows.iter().find(|r| **r != "-").map_or(0, |r| r.len());
        RsMatrix::new(
            n_s,
            rows.iter()
                .enumerate()
                .map(|(i, r)| if *r == "-" { MatrixRow::invalid(i) } else { MatrixRow::valid(i, r.chars().map(|c| c == 'G').collect()) })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn all_green_is_correct_under_every_criterion() {
        let mat = m(&["GGG", "GGG", "GGG", "GGG"]);
        for c in Criterion::named() {
            let r = classify(&mat, &c).unwrap();
            assert!(r.verdict);
            assert!(r.scenario_classes.iter().all(|&k| k == ScenarioClass::Correct));
        }
    }

    #[test]
    fn full_red_column_under_wrong100() {
        let r = classify(&m(&["RGG", "RGG", "RGR", "RGG"]), &Criterion::wrong100()).unwrap();
        assert!(!r.verdict);
        assert_eq!(r.indexes_of(ScenarioClass::Wrong), [0]);
    }

    #[test]
    fn invalid_rows_and_empty_matrix() {
        assert!(matches!(classify(&m(&["-", "-"]), &Criterion::wrong70()), Err(ValidateError::NoValidRows)));
        let r = classify(&m(&["RG", "-", "RG"]), &Criterion::wrong100()).unwrap();
        assert_eq!(r.valid_rows, 2);
        assert_eq!(r.wrong_fractions, [1.0, 0.0]);
    }

    #[test]
    fn matrix_shape_checks() {
        let bad = RsMatrix { n_rtl: 1, n_scenarios: 2, rows: vec![MatrixRow::valid(0, vec![true])] };
        assert_eq!(bad.check(), Err(MatrixError::CellCount { row: 0, got: 1, expected: 2 }));
        let bad = RsMatrix { n_rtl: 1, n_scenarios: 1, rows: vec![MatrixRow { rtl_index: 0, valid: false, cells: vec![true] }] };
        assert_eq!(bad.check(), Err(MatrixError::InvalidWithCells(0)));
        let good = m(&["GR", "-"]);
        assert_eq!(RsMatrix::from_json(&good.to_json()).unwrap(), good);
        assert_eq!(good.render(), "GR\n-");
    }

    #[test]
    fn criterion_parsing() {
        assert_eq!("wrong70".parse::<Criterion>().unwrap(), Criterion::wrong70());
        assert_eq!("100%-wrong".parse::<Criterion>().unwrap(), Criterion::wrong100());
        let c: Criterion = "custom:0.6:none:0.2".parse().unwrap();
        assert_eq!((c.wrong_threshold, c.green_row_threshold, c.uncertain_low), (0.6, None, 0.2));
        assert!("custom:0.2:0.25:0.3".parse::<Criterion>().is_err());
        assert!("wrong60".parse::<Criterion>().is_err());
        assert_eq!(Criterion::wrong50().to_string(), "wrong50");
    }

    #[test]
    fn sweep_slices() {
        let corpus = vec![
            LabelledMatrix { name: "a".into(), label: TbLabel::Correct, matrix: m(&["GG", "GG"]) },
            LabelledMatrix { name: "b".into(), label: TbLabel::Correct, matrix: m(&["GG", "GR"]) },
        ];
        let rows = accuracy_sweep(&corpus, &[Criterion::wrong70()]).unwrap();
        assert_eq!(rows[0].on_correct, Some(1.0));
        assert_eq!(rows[0].on_wrong, None);
        assert_eq!(rows[0].overall, Some(1.0));
    }
}
