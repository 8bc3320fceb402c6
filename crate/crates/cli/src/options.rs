use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use tbloop_core::config::ProviderKind;
use tbloop_core::{CassetteMode, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "tbloop", version, about = "Generate, validate and correct HDL testbenches with an LLM")]
pub struct Cli {
    /// TOML configuration file; flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the generate/validate/correct loop on task bundles.
    Run(RunArgs),
    /// Continue interrupted runs from their run directories.
    Resume(ResumeArgs),
    /// Grade finished runs against their bundles' golden and mutant RTL.
    Eval(EvalArgs),
    /// Measure criterion accuracy over a labelled matrix corpus.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Task bundle directories (each holding a task.json).
    #[arg(required = true)]
    pub bundles: Vec<PathBuf>,
    /// Run id; defaults to the current UTC time.
    #[arg(long)]
    pub run_id: Option<String>,
    /// Suite report path; defaults to <runs-dir>/report-<run-id>.json.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Stop each task after this many agent transitions (for testing resume).
    #[arg(long, hide = true)]
    pub max_transitions: Option<usize>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct ResumeArgs {
    /// Run directories (<runs-dir>/<task>/<run-id>).
    #[arg(required = true)]
    pub run_dirs: Vec<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directories to grade.
    pub run_dirs: Vec<PathBuf>,
    /// Also write the grade table as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Directory of labelled matrix JSON files.
    pub corpus: PathBuf,
    /// Comma-separated criteria.
    #[arg(long, value_delimiter = ',', default_value = "wrong100,wrong70,wrong50")]
    pub criteria: Vec<String>,
    /// Also write the table as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Flags mirroring [`RunConfig`] fields. Unset flags leave the file or
/// default value alone.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub criterion: Option<String>,
    #[arg(long)]
    pub n_rtl: Option<usize>,
    #[arg(long)]
    pub i_c_max: Option<u32>,
    #[arg(long)]
    pub i_r_max: Option<u32>,
    #[arg(long)]
    pub agreement: Option<f64>,
    /// Default model id for every stage.
    #[arg(long)]
    pub model: Option<String>,
    /// Per-stage model, as <stage>=<model> (repeatable).
    #[arg(long = "stage-model", value_parser = parse_stage_model)]
    pub stage_models: Vec<(String, String)>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// record | replay | passthrough
    #[arg(long)]
    pub mode: Option<CassetteMode>,
    #[arg(long)]
    pub cassette_dir: Option<PathBuf>,
    /// http | script
    #[arg(long)]
    pub provider: Option<ProviderKind>,
    #[arg(long)]
    pub script_dir: Option<PathBuf>,
    #[arg(long)]
    pub runs_dir: Option<PathBuf>,
    #[arg(long)]
    pub iverilog: Option<String>,
    #[arg(long)]
    pub vvp: Option<String>,
    #[arg(long)]
    pub python: Option<String>,
    /// Seconds.
    #[arg(long)]
    pub compile_timeout: Option<u64>,
    /// Seconds.
    #[arg(long)]
    pub sim_timeout: Option<u64>,
    /// Concurrent simulations.
    #[arg(long)]
    pub sim_jobs: Option<usize>,
    /// Concurrent LLM requests within a stage.
    #[arg(long)]
    pub llm_jobs: Option<usize>,
    /// Concurrent tasks.
    #[arg(short, long)]
    pub jobs: Option<usize>,
}

fn parse_stage_model(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .filter(|(a, b)| !a.is_empty() && !b.is_empty())
        .ok_or_else(|| format!("expected <stage>=<model>, got '{s}'"))
}

impl Overrides {
    pub fn apply(&self, c: &mut RunConfig) {
        fn set<T: Clone>(dst: &mut T, src: &Option<T>) {
            if let Some(v) = src {
                *dst = v.clone();
            }
        }
        set(&mut c.criterion, &self.criterion);
        set(&mut c.n_rtl, &self.n_rtl);
        set(&mut c.i_c_max, &self.i_c_max);
        set(&mut c.i_r_max, &self.i_r_max);
        set(&mut c.agreement_threshold, &self.agreement);
        set(&mut c.llm.model, &self.model);
        set(&mut c.llm.temperature, &self.temperature);
        set(&mut c.llm.max_parallel_requests, &self.llm_jobs);
        for (stage, model) in &self.stage_models {
            c.llm.stage_models.insert(stage.clone(), model.clone());
        }
        set(&mut c.cassette_mode, &self.mode);
        if self.cassette_dir.is_some() {
            c.cassette_dir = self.cassette_dir.clone();
        }
        set(&mut c.provider, &self.provider);
        if self.script_dir.is_some() {
            c.script_dir = self.script_dir.clone();
        }
        set(&mut c.runs_dir, &self.runs_dir);
        set(&mut c.sim.iverilog, &self.iverilog);
        set(&mut c.sim.vvp, &self.vvp);
        set(&mut c.sim.python, &self.python);
        set(&mut c.sim.compile_timeout_secs, &self.compile_timeout);
        set(&mut c.sim.sim_timeout_secs, &self.sim_timeout);
        set(&mut c.sim.max_parallel, &self.sim_jobs);
        set(&mut c.max_parallel_tasks, &self.jobs);
    }
}
