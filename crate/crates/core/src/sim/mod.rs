//! Simulator harness: compiles driver + DUT with Icarus Verilog (`iverilog`),
//! runs the image with `vvp`, and feeds the signal dump to the generated
//! checker.
//!
//! Every run happens in a fresh temporary directory. Compile and run failures
//! are data (invalid rows), not errors; only a missing tool is an error.

mod process;
mod protocol;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::testbench::{stub_dut, Testbench, SIGNAL_DUMP_FILE};

pub use process::{default_parallelism, parallel_map, run_with_timeout, ProcessOutput};
pub use protocol::{
    dump_scenarios, parse_checker_protocol, parse_signal_dump, DumpError, ProtocolViolation, ScenarioOutcome,
    SignalRecord,
};

pub const DRIVER_FILE: &str = "driver.v";
pub const DUT_FILE: &str = "dut.v";
pub const CHECKER_FILE: &str = "checker.py";
pub const IMAGE_FILE: &str = "sim.vvp";
pub const DRIVER_TOP: &str = "tb";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("required tool '{tool}' not found (looked for '{name}')")]
    ToolMissing { tool: &'static str, name: String },
    #[error("simulation workspace i/o: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Error)]
pub enum CheckerError {
    #[error("checker exited with {code:?}: {log}")]
    Crash { code: Option<i32>, log: String },
    #[error("checker timed out after {0:?}")]
    Timeout(Duration),
    #[error("checker protocol: {0}")]
    Protocol(#[from] ProtocolViolation),
    #[error("checker i/o: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub iverilog: String,
    pub vvp: String,
    /// Interpreter command for the checker, e.g. `["python3"]`.
    pub checker_cmd: Vec<String>,
    /// Language generation flag passed to `iverilog`.
    pub language_flag: String,
    pub compile_timeout: Duration,
    pub sim_timeout: Duration,
    pub max_parallel: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            iverilog: "iverilog".into(),
            vvp: "vvp".into(),
            checker_cmd: vec!["python3".into()],
            language_flag: "-g2012".into(),
            compile_timeout: Duration::from_secs(10),
            sim_timeout: Duration::from_secs(20),
            max_parallel: default_parallelism(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RtlOrigin {
    Golden,
    Mutant,
    LlmGenerated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RtlCandidate {
    pub source: String,
    pub origin: RtlOrigin,
    pub index: usize,
    /// Filled by a compile probe.
    pub syntax_ok: Option<bool>,
}

impl RtlCandidate {
    pub fn new(source: impl Into<String>, origin: RtlOrigin, index: usize) -> Self {
        Self { source: source.into(), origin, index, syntax_ok: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompileResult {
    pub ok: bool,
    pub log: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutput {
    pub ok: bool,
    pub timed_out: bool,
    pub signal_dump: String,
    pub log: String,
}

/// Why a matrix row is invalid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowFailure {
    Compile,
    Timeout,
    Run,
    Checker,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimRun {
    pub rtl_index: usize,
    pub compile_ok: bool,
    pub run_ok: bool,
    pub outcomes: Vec<ScenarioOutcome>,
    pub failure: Option<RowFailure>,
    pub raw_log: String,
    pub wall_time: Duration,
}

impl SimRun {
    pub fn valid(&self) -> bool {
        self.compile_ok && self.run_ok
    }

    pub fn all_passed(&self) -> bool {
        self.valid() && self.outcomes.iter().all(|o| o.passed)
    }
}

/// A simulator with its tools resolved to absolute paths.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: SimConfig,
    iverilog: PathBuf,
    vvp: PathBuf,
    checker: PathBuf,
}

fn resolve(tool: &'static str, name: &str) -> Result<PathBuf, SimError> {
    which::which(name).map_err(|_| SimError::ToolMissing { tool, name: name.to_string() })
}

fn scratch_dir(prefix: &str) -> io::Result<tempfile::TempDir> {
    tempfile::Builder::new().prefix(prefix).tempdir()
}

impl Simulator {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        let iverilog = resolve("iverilog", &config.iverilog)?;
        let vvp = resolve("vvp", &config.vvp)?;
        let interp = config.checker_cmd.first().cloned().unwrap_or_default();
        let checker = resolve("checker interpreter", &interp)?;
        Ok(Self { config, iverilog, vvp, checker })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    fn iverilog_cmd(&self, workdir: &Path) -> Command {
        let mut cmd = Command::new(&self.iverilog);
        cmd.current_dir(workdir).arg(&self.config.language_flag);
        cmd
    }

    fn exec(&self, cmd: &mut Command, timeout: Duration, tool: &'static str) -> Result<ProcessOutput, SimError> {
        run_with_timeout(cmd, timeout).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => SimError::ToolMissing { tool, name: format!("{cmd:?}") },
            _ => SimError::Io(e),
        })
    }

    fn compile_outcome(out: ProcessOutput, timeout: Duration) -> CompileResult {
        let mut log = out.stdout + &out.stderr;
        if out.timed_out {
            log.push_str(&format!("\ncompile timed out after {}s\n", timeout.as_secs_f64()));
        }
        CompileResult { ok: out.code == Some(0) && !out.timed_out, log }
    }

    /// Compiles driver and DUT into `workdir/sim.vvp`.
    pub fn compile(&self, driver_source: &str, dut_source: &str, workdir: &Path) -> Result<CompileResult, SimError> {
        fs::create_dir_all(workdir)?;
        if dut_source.trim().is_empty() {
            return Ok(CompileResult { ok: false, log: "empty DUT source\n".into() });
        }
        fs::write(workdir.join(DRIVER_FILE), driver_source)?;
        fs::write(workdir.join(DUT_FILE), dut_source)?;
        let _ = fs::remove_file(workdir.join(IMAGE_FILE));
        let timeout = self.config.compile_timeout;
        let mut cmd = self.iverilog_cmd(workdir);
        cmd.args(["-s", DRIVER_TOP, "-o", IMAGE_FILE, DRIVER_FILE, DUT_FILE]);
        let out = self.exec(&mut cmd, timeout, "iverilog")?;
        let mut res = Self::compile_outcome(out, timeout);
        res.ok &= workdir.join(IMAGE_FILE).is_file();
        Ok(res)
    }

    /// Parses and elaborates sources without producing an image.
    pub fn syntax_check(&self, sources: &[(&str, &str)], top: Option<&str>) -> Result<CompileResult, SimError> {
        let dir = scratch_dir("tbloop-lint-")?;
        if sources.iter().all(|(_, s)| s.trim().is_empty()) {
            return Ok(CompileResult { ok: false, log: "empty source\n".into() });
        }
        let mut cmd = self.iverilog_cmd(dir.path());
        cmd.args(["-t", "null"]);
        if let Some(top) = top {
            cmd.args(["-s", top]);
        }
        for (name, text) in sources {
            fs::write(dir.path().join(name), text)?;
            cmd.arg(name);
        }
        let timeout = self.config.compile_timeout;
        let out = self.exec(&mut cmd, timeout, "iverilog")?;
        Ok(Self::compile_outcome(out, timeout))
    }

    /// Compile probe for a candidate DUT on its own.
    pub fn check_rtl(&self, rtl_source: &str) -> Result<CompileResult, SimError> {
        self.syntax_check(&[(DUT_FILE, rtl_source)], None)
    }

    /// Compile probe for a driver against a port-only stub of the DUT.
    pub fn check_driver(&self, driver_source: &str, module_header: &str) -> Result<CompileResult, SimError> {
        let stub = stub_dut(module_header);
        self.syntax_check(&[(DRIVER_FILE, driver_source), (DUT_FILE, &stub)], Some(DRIVER_TOP))
    }

    /// Runs a compiled image in its own directory and collects the dump.
    pub fn run_simulation(&self, image: &Path, timeout: Duration) -> Result<RunOutput, SimError> {
        let workdir = image.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let dump_path = workdir.join(SIGNAL_DUMP_FILE);
        let _ = fs::remove_file(&dump_path);
        let mut cmd = Command::new(&self.vvp);
        cmd.current_dir(workdir).arg(image.file_name().unwrap_or(image.as_os_str()));
        let out = self.exec(&mut cmd, timeout, "vvp")?;
        let mut log = out.stdout + &out.stderr;
        if out.timed_out {
            log.push_str(&format!("\nsimulation timed out after {}s\n", timeout.as_secs_f64()));
        }
        let dump = fs::read_to_string(&dump_path).ok();
        if dump.is_none() && !out.timed_out {
            log.push_str(&format!("\nno {SIGNAL_DUMP_FILE} written\n"));
        }
        Ok(RunOutput {
            ok: out.code == Some(0) && !out.timed_out && dump.is_some(),
            timed_out: out.timed_out,
            signal_dump: dump.unwrap_or_default(),
            log,
        })
    }

    fn checker_command(&self, workdir: &Path) -> Command {
        let mut cmd = Command::new(&self.checker);
        cmd.current_dir(workdir).args(&self.config.checker_cmd[1..]).args([CHECKER_FILE, SIGNAL_DUMP_FILE]);
        cmd
    }

    /// Runs the checker on a dump; one outcome per scenario, ordered by index.
    pub fn run_checker(
        &self,
        checker_source: &str,
        signal_dump: &str,
        workdir: &Path,
        n_scenarios: usize,
    ) -> Result<Vec<ScenarioOutcome>, CheckerError> {
        fs::create_dir_all(workdir)?;
        fs::write(workdir.join(CHECKER_FILE), checker_source)?;
        fs::write(workdir.join(SIGNAL_DUMP_FILE), signal_dump)?;
        let timeout = self.config.sim_timeout;
        let out = run_with_timeout(&mut self.checker_command(workdir), timeout)?;
        if out.timed_out {
            return Err(CheckerError::Timeout(timeout));
        }
        if out.code != Some(0) {
            return Err(CheckerError::Crash { code: out.code, log: out.stderr });
        }
        Ok(parse_checker_protocol(&out.stdout, n_scenarios)?)
    }

    /// Runs the checker on an empty dump; it must exit cleanly and speak the
    /// protocol (every scenario present, FAIL being the expected verdict).
    pub fn probe_checker(&self, checker_source: &str, n_scenarios: usize) -> Result<(), CheckerError> {
        let dir = scratch_dir("tbloop-probe-")?;
        self.run_checker(checker_source, "", dir.path(), n_scenarios).map(|_| ())
    }

    /// compile → run → check for one candidate. Failures become an invalid
    /// row; the only error is an environment failure.
    pub fn simulate_matrix_row(&self, testbench: &Testbench, rtl: &RtlCandidate) -> Result<SimRun, SimError> {
        let start = Instant::now();
        let dir = scratch_dir("tbloop-sim-")?;
        let mut run = SimRun {
            rtl_index: rtl.index,
            compile_ok: false,
            run_ok: false,
            outcomes: Vec::new(),
            failure: None,
            raw_log: String::new(),
            wall_time: Duration::ZERO,
        };
        let finish = |mut run: SimRun, failure: Option<RowFailure>| {
            run.failure = failure;
            if failure.is_some() {
                run.outcomes.clear();
            }
            run.wall_time = start.elapsed();
            Ok(run)
        };
        if rtl.syntax_ok == Some(false) {
            run.raw_log.push_str("[compile]\nskipped: candidate failed its syntax probe\n");
            return finish(run, Some(RowFailure::Compile));
        }
        let compiled = self.compile(&testbench.driver_source, &rtl.source, dir.path())?;
        run.raw_log.push_str("[compile]\n");
        run.raw_log.push_str(&compiled.log);
        if !compiled.ok {
            return finish(run, Some(RowFailure::Compile));
        }
        run.compile_ok = true;
        let sim = self.run_simulation(&dir.path().join(IMAGE_FILE), self.config.sim_timeout)?;
        run.raw_log.push_str("[run]\n");
        run.raw_log.push_str(&sim.log);
        if !sim.ok {
            return finish(run, Some(if sim.timed_out { RowFailure::Timeout } else { RowFailure::Run }));
        }
        let checked = self.run_checker(&testbench.checker_source, &sim.signal_dump, dir.path(), testbench.n_scenarios());
        run.raw_log.push_str("[checker]\n");
        match checked {
            Ok(outcomes) => {
                run.run_ok = true;
                run.outcomes = outcomes;
                finish(run, None)
            }
            Err(e) => {
                run.raw_log.push_str(&e.to_string());
                run.raw_log.push('\n');
                finish(run, Some(RowFailure::Checker))
            }
        }
    }

    /// Simulates every candidate, bounded by `max_parallel`.
    pub fn simulate_rows(&self, testbench: &Testbench, rtls: &[RtlCandidate]) -> Result<Vec<SimRun>, SimError> {
        parallel_map(rtls, self.config.max_parallel, |rtl| self.simulate_matrix_row(testbench, rtl)).into_iter().collect()
    }

    /// Fills `syntax_ok` on every candidate that has not been probed yet.
    pub fn probe_candidates(&self, rtls: &mut [RtlCandidate]) -> Result<(), SimError> {
        let todo: Vec<usize> = (0..rtls.len()).filter(|&i| rtls[i].syntax_ok.is_none()).collect();
        let results = parallel_map(&todo, self.config.max_parallel, |&i| self.check_rtl(&rtls[i].source));
        for (i, r) in todo.into_iter().zip(results) {
            rtls[i].syntax_ok = Some(r?.ok);
        }
        Ok(())
    }
}
