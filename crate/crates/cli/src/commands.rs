use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use tbloop_core::agent::{AgentConfig, RunStore, RESULT_FILE, STATE_FILE};
use tbloop_core::bundle::{load_matrix_corpus, TaskBundle};
use tbloop_core::config::ProviderKind;
use tbloop_core::eval::{evaluate, grade_suite, EvalVerdict, GradeTable};
use tbloop_core::llm::{write_atomic, HttpChatProvider, ScriptProvider};
use tbloop_core::report::{run_bundle, ReportSettings, Start, TaskReport, TaskTiming};
use tbloop_core::sim::parallel_map;
use tbloop_core::validator::{accuracy_sweep, SweepRow};
use tbloop_core::{Cassette, CassetteMode, CircuitKind, Gateway, RunConfig, RunReport, RunResult, Simulator, SCHEMA_VERSION};

use crate::options::{Cli, Command, EvalArgs, Overrides, ResumeArgs, RunArgs, SweepArgs};
use crate::EnvError;

pub const API_KEY_VAR: &str = "TBLOOP_API_KEY";
pub const ENDPOINT_VAR: &str = "TBLOOP_ENDPOINT";
const RUN_META: &str = "run.json";

/// Written next to each run's state so `resume` and `eval` can find the
/// bundle and settings again.
#[derive(Debug, Serialize, Deserialize)]
struct RunMeta {
    bundle: PathBuf,
    run_id: String,
    config: RunConfig,
}

pub fn dispatch(cli: Cli) -> Result<()> {
    if cli.config.is_some() && !matches!(cli.command, Command::Run(_)) {
        bail!("--config only applies to `run`; resume and eval reuse the configuration stored with each run");
    }
    match cli.command {
        Command::Run(a) => run(cli.config.as_deref(), a),
        Command::Resume(a) => resume(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
    }
}

fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
    let mut config = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        None => RunConfig::default(),
    };
    overrides.apply(&mut config);
    config.validate()?;
    Ok(config)
}

fn simulator(config: &RunConfig) -> Result<Simulator> {
    Ok(Simulator::new(config.sim.to_sim_config())?)
}

fn gateway(config: &RunConfig, bundle: &TaskBundle) -> Result<Gateway> {
    let id = &bundle.spec.problem_id;
    let cassette = match config.cassette_mode {
        CassetteMode::Passthrough => Cassette::in_memory(CassetteMode::Passthrough),
        mode => {
            let dir = config.cassette_dir.as_ref().map_or_else(|| bundle.dir.join("cassette"), |d| d.join(id));
            Cassette::open(&dir, mode).with_context(|| format!("opening cassette for {id}"))?
        }
    };
    let gw = Gateway::new(cassette);
    Ok(match config.provider {
        ProviderKind::Script => {
            let dir = config.script_dir.as_ref().map_or_else(|| bundle.dir.join("script"), |d| d.join(id));
            gw.with_provider(ScriptProvider::new(dir))
        }
        ProviderKind::Http if config.cassette_mode == CassetteMode::Replay => gw,
        ProviderKind::Http => {
            let key = std::env::var(API_KEY_VAR)
                .ok()
                .filter(|k| !k.trim().is_empty())
                .ok_or_else(|| EnvError(format!("{API_KEY_VAR} is not set; use --mode replay or set the key")))?;
            let endpoint = std::env::var(ENDPOINT_VAR).unwrap_or_else(|_| config.endpoint.clone());
            gw.with_provider(HttpChatProvider::new(endpoint, key, Duration::from_secs(config.request_timeout_secs))?)
        }
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn default_run_id() -> String {
    chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string()
}

fn timing_path(report: &Path) -> PathBuf {
    report.with_extension("timing.json")
}

struct Job {
    bundle: TaskBundle,
    gateway: Gateway,
    store: RunStore,
    config: RunConfig,
    start: Start,
}

/// Runs the jobs on a bounded pool, then writes the suite report and a
/// separate timing file.
fn execute(jobs: Vec<Job>, sim: &Simulator, agent: AgentConfig, settings: ReportSettings, report: &Path, parallel: usize) -> Result<()> {
    let outcomes = parallel_map(&jobs, parallel, |job| {
        log::info!("{}: starting in {}", job.bundle.spec.problem_id, job.store.root().display());
        let out = run_bundle(&job.bundle, &job.config, &agent, &job.gateway, sim, &job.store, job.start);
        match &out.0.error {
            Some(e) => log::error!("{}: {e}", job.bundle.spec.problem_id),
            None => log::info!("{}: finished in {:.1}s", job.bundle.spec.problem_id, out.1.as_secs_f64()),
        }
        out
    });
    let timing: Vec<TaskTiming> = outcomes
        .iter()
        .map(|(t, d)| TaskTiming { problem_id: t.problem_id.clone(), elapsed_ms: d.as_millis() })
        .collect();
    let tasks: Vec<TaskReport> = outcomes.into_iter().map(|(t, _)| t).collect();
    for t in &tasks {
        println!("{}", summary_line(t));
    }
    let suite = RunReport::new(settings, tasks);
    write_atomic_report(report, &suite)?;
    write_json(&timing_path(report), &timing)?;
    println!("report: {}", report.display());
    Ok(())
}

fn write_atomic_report(path: &Path, report: &RunReport) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_atomic(path, report.to_json().as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn summary_line(t: &TaskReport) -> String {
    if let Some(e) = &t.error {
        return format!("{:<16} error: {e}", t.problem_id);
    }
    let verdict = t.final_verdict.map_or("-".to_string(), |v| v.to_string());
    let level = t.eval.as_ref().map_or("-".to_string(), |e| e.level.to_string());
    format!(
        "{:<16} verdict={verdict} gave_up={} generations={} corrections={} eval={level}",
        t.problem_id, t.gave_up, t.generations, t.corrections
    )
}

fn run(config_path: Option<&Path>, a: RunArgs) -> Result<()> {
    let config = load_config(config_path, &a.overrides)?;
    let criterion = config.criterion()?;
    let bundles = a.bundles.iter().map(TaskBundle::load).collect::<Result<Vec<_>, _>>()?;
    let mut seen = BTreeSet::new();
    for b in &bundles {
        ensure!(seen.insert(b.spec.problem_id.clone()), "task '{}' is listed twice", b.spec.problem_id);
    }
    let sim = simulator(&config)?;
    let run_id = a.run_id.unwrap_or_else(default_run_id);
    ensure!(
        !run_id.is_empty() && !run_id.contains(['/', '\\']) && run_id != "." && run_id != "..",
        "invalid run id '{run_id}'"
    );
    let mut jobs = Vec::new();
    for bundle in bundles {
        let root = config.runs_dir.join(&bundle.spec.problem_id).join(&run_id);
        if root.join(STATE_FILE).exists() {
            bail!("run directory {} already holds a run; use `tbloop resume` or another --run-id", root.display());
        }
        let meta = RunMeta {
            bundle: fs::canonicalize(&bundle.dir).unwrap_or_else(|_| bundle.dir.clone()),
            run_id: run_id.clone(),
            config: config.clone(),
        };
        write_json(&root.join(RUN_META), &meta)?;
        jobs.push(Job {
            gateway: gateway(&config, &bundle)?,
            store: RunStore::new(root),
            config: config.clone(),
            bundle,
            start: Start::Fresh,
        });
    }
    let report = a.report.unwrap_or_else(|| config.runs_dir.join(format!("report-{run_id}.json")));
    let mut agent = config.agent();
    agent.max_transitions = a.max_transitions;
    execute(jobs, &sim, agent, ReportSettings::of(&config, criterion), &report, config.max_parallel_tasks)
}

fn resume(a: ResumeArgs) -> Result<()> {
    let mut jobs = Vec::new();
    let mut first: Option<(RunConfig, String)> = None;
    for dir in &a.run_dirs {
        let meta: RunMeta = read_json(&dir.join(RUN_META))?;
        let mut config = meta.config;
        a.overrides.apply(&mut config);
        config.validate()?;
        let bundle = TaskBundle::load(&meta.bundle)?;
        jobs.push(Job {
            gateway: gateway(&config, &bundle)?,
            store: RunStore::new(dir),
            config: config.clone(),
            bundle,
            start: Start::Resume,
        });
        first.get_or_insert((config, meta.run_id));
    }
    let (config, run_id) = first.expect("clap requires at least one run dir");
    let sim = simulator(&config)?;
    let report = a.report.unwrap_or_else(|| config.runs_dir.join(format!("report-{run_id}.json")));
    execute(jobs, &sim, config.agent(), ReportSettings::of(&config, config.criterion()?), &report, config.max_parallel_tasks)
}

#[derive(Debug, Serialize)]
struct EvalEntry {
    problem_id: String,
    circuit_kind: CircuitKind,
    verdict: EvalVerdict,
}

#[derive(Debug, Serialize)]
struct EvalReport {
    schema_version: u32,
    entries: Vec<EvalEntry>,
    grades: GradeTable,
}

fn eval_one(dir: &Path, overrides: &Overrides) -> Result<EvalEntry> {
    let meta: RunMeta = read_json(&dir.join(RUN_META))?;
    let mut config = meta.config;
    overrides.apply(&mut config);
    config.validate()?;
    let bundle = TaskBundle::load(&meta.bundle)?;
    let Some(eval_bundle) = &bundle.eval else {
        bail!("bundle {} has no mutants to grade against", bundle.dir.display());
    };
    let result: RunResult = read_json(&dir.join(RESULT_FILE)).context("run has not finished")?;
    let Some(tb) = result.final_testbench else {
        bail!("run ended without a testbench");
    };
    let sim = simulator(&config)?;
    let verdict = evaluate(&sim, &tb, eval_bundle, config.agreement_threshold)?;
    Ok(EvalEntry { problem_id: bundle.spec.problem_id.clone(), circuit_kind: bundle.spec.circuit_kind, verdict })
}

fn eval(a: EvalArgs) -> Result<()> {
    let mut entries = Vec::new();
    let mut failures = 0;
    for dir in &a.run_dirs {
        match eval_one(dir, &a.overrides) {
            Ok(e) => {
                let agreement = e.verdict.mutant_agreement.map_or("-".to_string(), |x| format!("{x:.2}"));
                println!("{:<16} level={} agreement={agreement}", e.problem_id, e.verdict.level);
                entries.push(e);
            }
            Err(e) if e.downcast_ref::<EnvError>().is_some() || e.downcast_ref::<tbloop_core::SimError>().is_some() => {
                return Err(e)
            }
            Err(e) => {
                failures += 1;
                eprintln!("{}: {e:#}", dir.display());
            }
        }
    }
    let grades = grade_suite(&entries.iter().map(|e| (e.circuit_kind, e.verdict.level)).collect::<Vec<_>>());
    print!("{grades}");
    if let Some(path) = &a.report {
        write_json(path, &EvalReport { schema_version: SCHEMA_VERSION, entries, grades })?;
    }
    ensure!(failures == 0, "{failures} run(s) could not be graded");
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepReport {
    schema_version: u32,
    corpus_size: usize,
    rows: Vec<SweepRow>,
}

fn sweep(a: SweepArgs) -> Result<()> {
    let corpus = load_matrix_corpus(&a.corpus)?;
    let criteria = a
        .criteria
        .iter()
        .map(|c| c.parse().with_context(|| format!("criterion '{c}'")))
        .collect::<Result<Vec<_>>>()?;
    let rows = accuracy_sweep(&corpus, &criteria)?;
    let pct = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{:.2}", v * 100.0));
    println!("{:<28} {:>10} {:>12} {:>10}", "criterion", "overall(%)", "on_correct(%)", "on_wrong(%)");
    for r in &rows {
        println!("{:<28} {:>10} {:>12} {:>10}", r.criterion, pct(r.overall), pct(r.on_correct), pct(r.on_wrong));
    }
    if let Some(path) = &a.out {
        write_json(path, &SweepReport { schema_version: SCHEMA_VERSION, corpus_size: corpus.len(), rows })?;
    }
    Ok(())
}
