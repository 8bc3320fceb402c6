//! Run configuration. Loaded from a TOML file by the CLI and overridden by
//! flags; every field has a default.

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, DEFAULT_I_C_MAX, DEFAULT_I_R_MAX};
use crate::eval::DEFAULT_AGREEMENT;
use crate::llm::{CassetteMode, LlmSettings};
use crate::sim::{default_parallelism, SimConfig};
use crate::validator::{Criterion, CriterionError, DEFAULT_N_RTL};

pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    /// OpenAI-compatible chat-completions endpoint.
    Http,
    /// Canned replies from a directory of `<tag>.txt` files.
    Script,
}

impl std::str::FromStr for ProviderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "http" => Ok(Self::Http),
            "script" => Ok(Self::Script),
            other => Err(format!("unknown provider '{other}' (http|script)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSettings {
    pub iverilog: String,
    pub vvp: String,
    pub python: String,
    pub compile_timeout_secs: u64,
    pub sim_timeout_secs: u64,
    pub max_parallel: usize,
}

impl Default for SimSettings {
    fn default() -> Self {
        let d = SimConfig::default();
        Self {
            iverilog: d.iverilog,
            vvp: d.vvp,
            python: d.checker_cmd[0].clone(),
            compile_timeout_secs: d.compile_timeout.as_secs(),
            sim_timeout_secs: d.sim_timeout.as_secs(),
            max_parallel: default_parallelism(),
        }
    }
}

impl SimSettings {
    pub fn to_sim_config(&self) -> SimConfig {
        SimConfig {
            iverilog: self.iverilog.clone(),
            vvp: self.vvp.clone(),
            checker_cmd: vec![self.python.clone()],
            compile_timeout: Duration::from_secs(self.compile_timeout_secs),
            sim_timeout: Duration::from_secs(self.sim_timeout_secs),
            max_parallel: self.max_parallel.max(1),
            ..SimConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `wrong100`, `wrong70`, `wrong50` or `custom:<w>[:<g>|none[:<low>]]`.
    pub criterion: String,
    pub n_rtl: usize,
    pub i_c_max: u32,
    pub i_r_max: u32,
    pub agreement_threshold: f64,
    pub llm: LlmSettings,
    pub cassette_mode: CassetteMode,
    /// Cassette directory; defaults to `<bundle>/cassette`.
    pub cassette_dir: Option<PathBuf>,
    pub provider: ProviderKind,
    /// Script directory for the script provider; defaults to `<bundle>/script`.
    pub script_dir: Option<PathBuf>,
    pub endpoint: String,
    pub request_timeout_secs: u64,
    pub sim: SimSettings,
    pub max_parallel_tasks: usize,
    pub runs_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            criterion: "wrong70".into(),
            n_rtl: DEFAULT_N_RTL,
            i_c_max: DEFAULT_I_C_MAX,
            i_r_max: DEFAULT_I_R_MAX,
            agreement_threshold: DEFAULT_AGREEMENT,
            llm: LlmSettings::default(),
            cassette_mode: CassetteMode::Record,
            cassette_dir: None,
            provider: ProviderKind::Http,
            script_dir: None,
            endpoint: DEFAULT_ENDPOINT.into(),
            request_timeout_secs: 120,
            sim: SimSettings::default(),
            max_parallel_tasks: 1,
            runs_dir: PathBuf::from("runs"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("criterion: {0}")]
    Criterion(#[from] CriterionError),
    #[error("{field} must be {expect}")]
    Range { field: &'static str, expect: &'static str },
}

impl RunConfig {
    pub fn criterion(&self) -> Result<Criterion, ConfigError> {
        Ok(self.criterion.parse::<Criterion>()?)
    }

    pub fn agent(&self) -> AgentConfig {
        AgentConfig { i_c_max: self.i_c_max, i_r_max: self.i_r_max, max_transitions: None }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.criterion()?;
        let range = |ok: bool, field, expect| if ok { Ok(()) } else { Err(ConfigError::Range { field, expect }) };
        range(self.n_rtl >= 2, "n_rtl", "at least 2")?;
        range((0.0..=1.0).contains(&self.agreement_threshold), "agreement_threshold", "within [0, 1]")?;
        range(self.max_parallel_tasks >= 1, "max_parallel_tasks", "at least 1")?;
        range(self.llm.max_parallel_requests >= 1, "llm.max_parallel_requests", "at least 1")?;
        range(self.sim.compile_timeout_secs >= 1, "sim.compile_timeout_secs", "at least 1")?;
        range(self.sim.sim_timeout_secs >= 1, "sim.sim_timeout_secs", "at least 1")
    }
}
