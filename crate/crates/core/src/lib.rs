//! Testbench generation, ensemble self-validation and self-correction for
//! HDL designs, driven by a bounded correct/reboot/pass control loop.

pub mod agent;
pub mod bundle;
pub mod config;
pub mod context;
pub mod corrector;
pub mod eval;
pub mod fixed;
pub mod generator;
pub mod llm;
pub mod prompts;
pub mod report;
pub mod sim;
pub mod task;
pub mod testbench;
pub mod validator;

pub use agent::{decide, run_task, Action, AgentConfig, AgentState, RunResult, RunStore, Stages};
pub use bundle::{BundleManifest, TaskBundle};
pub use config::RunConfig;
pub use context::StageContext;
pub use eval::{EvalBundle, EvalLevel, EvalVerdict, Report, DEFAULT_AGREEMENT};
pub use llm::{Cassette, CassetteMode, Gateway, LlmError, LlmSettings, TokenLedger};
pub use report::{RunReport, TaskReport, SCHEMA_VERSION};
pub use sim::{RtlCandidate, RtlOrigin, ScenarioOutcome, SimConfig, SimError, SimRun, Simulator};
pub use task::{CircuitKind, TaskSpec};
pub use testbench::{ScenarioDescriptor, Testbench};
pub use validator::{classify, Criterion, RsMatrix, ScenarioClass, ValidationReport};
