//! Acceptance checks. Each criterion prints one `PASS`/`FAIL`/`SKIP` line;
//! the process exits nonzero if any criterion fails. Runs without the test
//! harness so the lines are never captured.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use tbloop_core::agent::StageError;
use tbloop_core::bundle::TaskBundle;
use tbloop_core::corrector::{Correction, Diagnosis};
use tbloop_core::eval::compare_reports;
use tbloop_core::generator::parse_scenario_list;
use tbloop_core::llm::find_code_block;
use tbloop_core::testbench::{extract_core, CHECKER_ANCHORS, DRIVER_ANCHORS};
use tbloop_core::validator::{build_rs_matrix, MatrixRow};
use tbloop_core::{
    classify, decide, run_task, Action, AgentConfig, AgentState, Criterion, Report, RsMatrix, RtlCandidate,
    RtlOrigin, RunStore, ScenarioClass, SimConfig, Simulator, Stages, TaskSpec, Testbench, ValidationReport,
    DEFAULT_AGREEMENT,
};

use common::{bundle, code, json, replay_run, stderr};

// Pinned limits.
const ORACLE_BUDGET: Duration = Duration::from_secs(10);
const RANDOM_MATRICES: usize = 1000;
const RANDOM_SEED: u64 = 0x7b10_0b5e;
const REPLAY_BUDGET: Duration = Duration::from_secs(120);
const AGREEMENT_EPS: f64 = 1e-12;
const FIXTURES: [&str; 3] = ["and_gate", "counter4", "adder4_fix"];

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn line(name: &str, outcome: &Outcome) -> bool {
    match outcome {
        Outcome::Pass(m) => println!("PASS  {name}: {m}"),
        Outcome::Fail(m) => println!("FAIL  {name}: {m}"),
        Outcome::Skip(m) => println!("SKIP  {name}: {m}"),
    }
    !matches!(outcome, Outcome::Fail(_))
}

fn main() {
    let results = [
        ("criterion oracle equivalence", criterion_oracle()),
        ("agent transition table", transition_table()),
        ("replay determinism", replay_determinism()),
        ("simulation ground truth", ground_truth()),
        ("eval2 agreement arithmetic", eval2_arithmetic()),
        ("live smoke", live_smoke()),
    ];
    // print every line before judging
    let passed: Vec<bool> = results.iter().map(|(n, o)| line(n, o)).collect();
    println!(
        "NOTE  headline figures (70.13% Eval2 pass ratio, 88.85% validation accuracy, 54.93% SEQ ratio) are not \
         reproducible at desk scale: they need 156 tasks x 5 repeats against a proprietary model and the \
         VerilogEval-derived dataset; the property checks above stand in for them"
    );
    if !passed.iter().all(|&p| p) {
        eprintln!("at least one acceptance criterion failed");
        std::process::exit(1);
    }
}

// ---- criterion logic -----------------------------------------------------

/// Thresholds as exact fractions `(num, den)`.
struct Rules {
    wrong: (u64, u64),
    green: Option<(u64, u64)>,
    low: (u64, u64),
}

fn rules_of(c: &Criterion) -> Rules {
    match c.to_string().as_str() {
        "wrong100" => Rules { wrong: (1, 1), green: None, low: (3, 10) },
        "wrong70" => Rules { wrong: (7, 10), green: Some((1, 4)), low: (3, 10) },
        "wrong50" => Rules { wrong: (1, 2), green: Some((1, 4)), low: (3, 10) },
        other => panic!("no rules for {other}"),
    }
}

fn oracle(rows: &[Option<Vec<bool>>], n_s: usize, r: &Rules) -> Option<(bool, Vec<ScenarioClass>)> {
    let valid: Vec<&Vec<bool>> = rows.iter().flatten().collect();
    let n = valid.len() as u64;
    if n == 0 {
        return None;
    }
    let green = valid.iter().filter(|row| row.iter().all(|&c| c)).count() as u64;
    if let Some((a, b)) = r.green {
        if green * b > a * n {
            return Some((true, vec![ScenarioClass::Correct; n_s]));
        }
    }
    let classes: Vec<_> = (0..n_s)
        .map(|j| {
            let red = valid.iter().filter(|row| !row[j]).count() as u64;
            if red * r.wrong.1 >= r.wrong.0 * n {
                ScenarioClass::Wrong
            } else if red * r.low.1 <= r.low.0 * n {
                ScenarioClass::Correct
            } else {
                ScenarioClass::Uncertain
            }
        })
        .collect();
    Some((!classes.contains(&ScenarioClass::Wrong), classes))
}

fn agrees(rows: &[Option<Vec<bool>>], n_s: usize, c: &Criterion) -> bool {
    let mat = RsMatrix::new(
        n_s,
        rows.iter()
            .enumerate()
            .map(|(i, r)| match r {
                Some(cells) => MatrixRow::valid(i, cells.clone()),
                None => MatrixRow::invalid(i),
            })
            .collect(),
    )
    .unwrap();
    match (classify(&mat, c), oracle(rows, n_s, &rules_of(c))) {
        (Ok(r), Some((verdict, classes))) => r.verdict == verdict && r.scenario_classes == classes,
        (Err(_), None) => true,
        _ => false,
    }
}

fn criterion_oracle() -> Outcome {
    let start = Instant::now();
    let (mut checked, mut failed, mut mismatches) = (0usize, 0usize, Vec::new());
    let mut check = |rows: &[Option<Vec<bool>>], n_s: usize| {
        for c in Criterion::named() {
            checked += 1;
            if !agrees(rows, n_s, &c) {
                failed += 1;
                if mismatches.len() < 3 {
                    mismatches.push(format!("{c} on {rows:?}"));
                }
            }
        }
    };
    for n_s in 1..=3usize {
        let patterns: Vec<Vec<bool>> = (0..1u32 << n_s).map(|p| (0..n_s).map(|j| p >> j & 1 == 1).collect()).collect();
        for n_rows in 0..=4u32 {
            for code in 0..(patterns.len() as u32).pow(n_rows) {
                let mut c = code;
                let mut rows: Vec<Option<Vec<bool>>> = Vec::new();
                for _ in 0..n_rows {
                    rows.push(Some(patterns[c as usize % patterns.len()].clone()));
                    c /= patterns.len() as u32;
                }
                if code % 2 == 1 {
                    rows.insert(0, None);
                }
                check(&rows, n_s);
            }
        }
    }
    let mut rng = StdRng::seed_from_u64(RANDOM_SEED);
    for _ in 0..RANDOM_MATRICES {
        // bias each matrix towards red or green so every class shows up
        let p_green = rng.random_range(0.05..0.95);
        let rows: Vec<Option<Vec<bool>>> = (0..20)
            .map(|_| {
                if rng.random_bool(0.1) {
                    None
                } else {
                    Some((0..8).map(|_| rng.random_bool(p_green)).collect())
                }
            })
            .collect();
        check(&rows, 8);
    }
    let elapsed = start.elapsed();
    if failed > 0 {
        Outcome::Fail(format!("{failed} mismatches, e.g. {}", mismatches.join("; ")))
    } else if elapsed > ORACLE_BUDGET {
        Outcome::Fail(format!("{checked} checks took {elapsed:?} (limit {ORACLE_BUDGET:?})"))
    } else {
        Outcome::Pass(format!("{checked} checks, 0 mismatches, {:.2}s", elapsed.as_secs_f64()))
    }
}

// ---- agent ----------------------------------------------------------------

fn script(name: &str, file: &str) -> String {
    std::fs::read_to_string(bundle(name).join("script").join(file)).expect("script file")
}

fn script_core(name: &str, file: &str, lang: &str) -> String {
    let block = find_code_block(&script(name, file), lang).expect("code block");
    let anchors = if lang == "python" { CHECKER_ANCHORS } else { DRIVER_ANCHORS };
    extract_core(&block.body, anchors).unwrap()
}

/// The fixture's scripted testbench with its scripted correction applied.
fn reference_testbench(name: &str) -> Testbench {
    let spec = TaskBundle::load(bundle(name)).unwrap().spec;
    let tb = Testbench::assemble(
        &spec,
        parse_scenario_list(&script(name, "scenarios.g0.txt")),
        &script_core(name, "driver.g0.txt", "verilog"),
        &script_core(name, "checker.g0.txt", "python"),
        0,
    )
    .unwrap();
    if bundle(name).join("script/correct.g0r0.txt").exists() {
        tb.with_checker_core(&script_core(name, "correct.g0r0.txt", "python")).unwrap()
    } else {
        tb
    }
}

/// Stages whose validation is always false.
struct AlwaysFalse {
    tb: Testbench,
    validations: usize,
}

impl Stages for AlwaysFalse {
    fn generate(&mut self, _spec: &TaskSpec, generation: u32) -> Result<Testbench, StageError> {
        Ok(Testbench { generation, revision: 0, ..self.tb.clone() })
    }

    fn validate(&mut self, _spec: &TaskSpec, _tb: &Testbench) -> Result<ValidationReport, StageError> {
        self.validations += 1;
        let mat = RsMatrix::new(1, vec![MatrixRow::valid(0, vec![false])]).unwrap();
        Ok(classify(&mat, &Criterion::wrong100()).unwrap())
    }

    fn correct(&mut self, _spec: &TaskSpec, tb: &Testbench, _r: &ValidationReport) -> Result<Correction, StageError> {
        Ok(Correction {
            testbench: Testbench { revision: tb.revision + 1, ..tb.clone() },
            diagnosis: Diagnosis { why: "w".into(), where_: "x".into(), how: "h".into() },
            transcript: Vec::new(),
        })
    }
}

fn transition_table() -> Outcome {
    let defaults = AgentConfig::default();
    let (c_max, r_max) = (defaults.i_c_max, defaults.i_r_max);
    if (c_max, r_max) != (3, 10) {
        return Outcome::Fail(format!("default budgets are ({c_max}, {r_max}), expected (3, 10)"));
    }
    let mut states = 0;
    for i_c in 0..=c_max {
        for i_r in 0..=r_max {
            let s = AgentState { i_c, i_r, ..AgentState::new("t", c_max, r_max) };
            let on_false = if i_c < c_max {
                Action::Correcting
            } else if i_r < r_max {
                Action::Rebooting
            } else {
                Action::Pass
            };
            for (verdict, expected) in [(true, Action::Pass), (false, on_false)] {
                states += 1;
                let got = decide(&s, verdict);
                if got != expected {
                    return Outcome::Fail(format!("i_c={i_c} i_r={i_r} verdict={verdict}: {got:?}, expected {expected:?}"));
                }
            }
        }
    }
    let spec = TaskBundle::load(bundle("and_gate")).unwrap().spec;
    let mut stages = AlwaysFalse { tb: reference_testbench("and_gate"), validations: 0 };
    let dir = tempfile::tempdir().unwrap();
    let r = run_task(&spec, &defaults, &mut stages, &RunStore::new(dir.path())).unwrap();
    if (r.generations, r.corrections, r.gave_up) != (11, 33, true) {
        return Outcome::Fail(format!(
            "always-false run: {} generations, {} corrections, gave_up={}",
            r.generations, r.corrections, r.gave_up
        ));
    }
    Outcome::Pass(format!("{states} states match; always-false run: 11 generations, 33 corrections"))
}

// ---- replay --------------------------------------------------------------

fn replay_determinism() -> Outcome {
    let Some(sim) = common::sim_flags() else {
        return Outcome::Skip("no Verilog simulator available".into());
    };
    let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-replay");
    let mut reports = Vec::new();
    for copy in ["a", "b"] {
        let runs = root.join(copy);
        let _ = std::fs::remove_dir_all(&runs);
        let start = Instant::now();
        let out = replay_run(&runs, "replay", &FIXTURES, &sim, &[]);
        let elapsed = start.elapsed();
        if code(&out) != 0 {
            return Outcome::Fail(format!("run {copy} exited {}: {}", code(&out), stderr(&out)));
        }
        if elapsed > REPLAY_BUDGET {
            return Outcome::Fail(format!("run {copy} took {elapsed:?} (limit {REPLAY_BUDGET:?})"));
        }
        let mut files = vec![std::fs::read(runs.join("report-replay.json")).unwrap()];
        files.extend(FIXTURES.iter().map(|t| std::fs::read(runs.join(t).join("replay/result.json")).unwrap()));
        reports.push((files, elapsed));
    }
    if reports[0].0 != reports[1].0 {
        return Outcome::Fail("reports or results differ between the two runs".into());
    }
    let report = json(&root.join("a/report-replay.json"));
    let tasks = report["tasks"].as_array().unwrap();
    let kinds: Vec<&str> = tasks.iter().filter_map(|t| t["circuit_kind"].as_str()).collect();
    let corrected = tasks.iter().any(|t| t["corrections"] == 1 && t["final_verdict"] == true);
    if !corrected || !kinds.contains(&"combinational") || !kinds.contains(&"sequential") {
        return Outcome::Fail(format!("fixture coverage: kinds {kinds:?}, corrected={corrected}"));
    }
    Outcome::Pass(format!(
        "{} tasks, byte-identical, {:.1}s and {:.1}s",
        FIXTURES.len(),
        reports[0].1.as_secs_f64(),
        reports[1].1.as_secs_f64()
    ))
}

// ---- ground truth --------------------------------------------------------

fn simulator() -> Option<Simulator> {
    let flags = common::sim_flags()?;
    let cfg = SimConfig {
        iverilog: flags[1].clone(),
        vvp: flags[3].clone(),
        compile_timeout: Duration::from_secs(300),
        ..SimConfig::default()
    };
    Simulator::new(cfg).ok()
}

fn ground_truth() -> Outcome {
    let Some(sim) = simulator() else {
        return Outcome::Skip("no Verilog simulator available".into());
    };
    for name in FIXTURES {
        let dir = bundle(name);
        let read = |p: &str| std::fs::read_to_string(dir.join(p)).unwrap();
        let mut ensemble: Vec<RtlCandidate> =
            ["golden.v", "groundtruth/single_bug.v", "groundtruth/all_wrong.v", "groundtruth/syntax_error.v"]
                .iter()
                .enumerate()
                .map(|(i, f)| RtlCandidate::new(read(f), RtlOrigin::LlmGenerated, i))
                .collect();
        sim.probe_candidates(&mut ensemble).unwrap();
        let got = build_rs_matrix(&sim, &reference_testbench(name), &ensemble).unwrap();
        let expected = RsMatrix::from_json(&read("groundtruth/expected_matrix.json")).unwrap();
        if got != expected {
            return Outcome::Fail(format!("{name}: got\n{}expected\n{}", got.render(), expected.render()));
        }
    }
    Outcome::Pass(format!("{} fixtures match their expected matrices", FIXTURES.len()))
}

// ---- eval2 ---------------------------------------------------------------

fn eval2_arithmetic() -> Outcome {
    let expected = vec![Report::Failed; 10];
    let observed = |caught: usize| (0..10).map(|i| if i < caught { Report::Failed } else { Report::Passed }).collect::<Vec<_>>();
    for (caught, want_pass) in [(10, true), (9, true), (8, true), (7, false), (0, false)] {
        let (_, agreement, pass) = compare_reports(&observed(caught), &expected, DEFAULT_AGREEMENT).unwrap();
        let want = caught as f64 / 10.0;
        if (agreement - want).abs() > AGREEMENT_EPS || pass != want_pass {
            return Outcome::Fail(format!("{caught}/10: agreement {agreement}, pass={pass}"));
        }
    }
    Outcome::Pass("8/10 passes, 7/10 fails at the default threshold 0.8".into())
}

// ---- live ----------------------------------------------------------------

fn live_smoke() -> Outcome {
    if std::env::var("TBLOOP_API_KEY").map_or(true, |k| k.is_empty()) {
        return Outcome::Skip("TBLOOP_API_KEY not set".into());
    }
    let Some(sim) = common::sim_flags() else {
        return Outcome::Skip("no Verilog simulator available".into());
    };
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_tbloop"))
        .args(["run", "--mode", "passthrough", "--provider", "http", "--run-id", "live", "--runs-dir"])
        .arg(tmp.path())
        .args(&sim)
        .args(["and_gate", "counter4"].map(bundle))
        .output()
        .expect("spawn tbloop");
    if code(&out) != 0 {
        return Outcome::Fail(format!("exit {}: {}", code(&out), stderr(&out)));
    }
    let report = json(&tmp.path().join("report-live.json"));
    let tasks = report["tasks"].as_array().map_or(0, |t| t.len());
    if report["schema_version"] != 1 || tasks != 2 {
        return Outcome::Fail(format!("report schema_version {} with {tasks} tasks", report["schema_version"]));
    }
    Outcome::Pass("2 tasks completed; verdicts not asserted".into())
}
