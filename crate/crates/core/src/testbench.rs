//! The hybrid testbench: a Verilog driver that stimulates the DUT and dumps
//! its signals, and a Python checker that judges the dump scenario by
//! scenario.
//!
//! Both halves are built from fixed skeletons owned by this module. The
//! skeleton holds the interface (DUT instantiation, clock, dump task, dump
//! parser, protocol emitter); only the region between the CORE markers is
//! written by the model. Generation and correction therefore exchange core
//! code only, and [`splice`] puts it back into place.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::task::{ModuleInterface, PortDir, TaskError, TaskSpec};

/// File the driver writes its per-scenario signal records into.
pub const SIGNAL_DUMP_FILE: &str = "signals.txt";
pub const CLOCK_HALF_PERIOD: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Anchors {
    pub begin: &'static str,
    pub end: &'static str,
}

pub const DRIVER_ANCHORS: Anchors = Anchors { begin: "// CORE BEGIN", end: "// CORE END" };
pub const CHECKER_ANCHORS: Anchors = Anchors { begin: "# CORE BEGIN", end: "# CORE END" };

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioDescriptor {
    pub index: usize,
    pub name: String,
    pub description: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SpliceError {
    #[error("'{0}' marker without matching end marker")]
    UnclosedAnchor(&'static str),
    #[error("'{0}' marker without a preceding begin marker")]
    StrayEndAnchor(&'static str),
    #[error("skeleton is missing the '{0}' anchor")]
    MissingAnchor(&'static str),
}

#[derive(Debug, Error)]
pub enum TestbenchError {
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Splice(#[from] SpliceError),
    #[error("scenario list is empty")]
    NoScenarios,
    #[error("scenario indexes must be contiguous from 0 (got {0} at position {1})")]
    NonContiguous(usize, usize),
    #[error("duplicate scenario name '{0}'")]
    DuplicateName(String),
    #[error("testbench i/o at {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("testbench metadata at {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Testbench {
    /// Header of the DUT the driver instantiates.
    pub module_header: String,
    pub driver_source: String,
    pub checker_source: String,
    pub scenarios: Vec<ScenarioDescriptor>,
    /// Reboot lineage.
    pub generation: u32,
    /// Correction lineage within a generation.
    pub revision: u32,
}

pub fn check_scenarios(scenarios: &[ScenarioDescriptor]) -> Result<(), TestbenchError> {
    if scenarios.is_empty() {
        return Err(TestbenchError::NoScenarios);
    }
    let mut names = BTreeSet::new();
    for (pos, s) in scenarios.iter().enumerate() {
        if s.index != pos {
            return Err(TestbenchError::NonContiguous(s.index, pos));
        }
        if !names.insert(s.name.as_str()) {
            return Err(TestbenchError::DuplicateName(s.name.clone()));
        }
    }
    Ok(())
}

impl Testbench {
    /// Builds a testbench from the task skeletons and model-written cores.
    pub fn assemble(
        spec: &TaskSpec,
        scenarios: Vec<ScenarioDescriptor>,
        driver_core: &str,
        checker_core: &str,
        generation: u32,
    ) -> Result<Self, TestbenchError> {
        check_scenarios(&scenarios)?;
        let iface = spec.interface()?;
        let driver = splice(&driver_skeleton(&iface), DRIVER_ANCHORS, driver_core)?;
        let checker = splice(&checker_skeleton(&iface, scenarios.len()), CHECKER_ANCHORS, checker_core)?;
        Ok(Self {
            module_header: spec.module_header.clone(),
            driver_source: driver,
            checker_source: checker,
            scenarios,
            generation,
            revision: 0,
        })
    }

    pub fn n_scenarios(&self) -> usize {
        self.scenarios.len()
    }

    pub fn driver_core(&self) -> Result<&str, SpliceError> {
        core_region(&self.driver_source, DRIVER_ANCHORS)
    }

    pub fn checker_core(&self) -> Result<&str, SpliceError> {
        core_region(&self.checker_source, CHECKER_ANCHORS)
    }

    pub fn with_driver_core(&self, core: &str) -> Result<Self, SpliceError> {
        Ok(Self { driver_source: splice(&self.driver_source, DRIVER_ANCHORS, core)?, ..self.clone() })
    }

    pub fn with_checker_core(&self, core: &str) -> Result<Self, SpliceError> {
        Ok(Self { checker_source: splice(&self.checker_source, CHECKER_ANCHORS, core)?, ..self.clone() })
    }

    /// Scenario indexes the driver core selects via `scenario = <n>;`.
    pub fn driver_scenario_indexes(&self) -> BTreeSet<usize> {
        scenario_assignments(self.driver_core().unwrap_or(&self.driver_source))
    }

    /// Stub DUT with the same ports and no behavior, used to compile the
    /// driver on its own.
    pub fn stub_dut(&self) -> String {
        stub_dut(&self.module_header)
    }

    pub fn save(&self, dir: &Path) -> Result<(), TestbenchError> {
        let io = |path: &Path, source| TestbenchError::Io { path: path.display().to_string(), source };
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let json = serde_json::to_string_pretty(self).expect("testbench serializes");
        for (name, body) in [
            ("testbench.json", json.as_str()),
            ("driver.v", self.driver_source.as_str()),
            ("checker.py", self.checker_source.as_str()),
        ] {
            let path = dir.join(name);
            crate::llm::write_atomic(&path, body.as_bytes()).map_err(|e| io(&path, e))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, TestbenchError> {
        let path = dir.join("testbench.json");
        let text = fs::read_to_string(&path)
            .map_err(|source| TestbenchError::Io { path: path.display().to_string(), source })?;
        serde_json::from_str(&text).map_err(|source| TestbenchError::Parse { path: path.display().to_string(), source })
    }
}

static SCENARIO_ASSIGN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\bscenario\s*=\s*(\d+)\s*;").unwrap());

pub fn scenario_assignments(verilog: &str) -> BTreeSet<usize> {
    SCENARIO_ASSIGN.captures_iter(verilog).filter_map(|c| c[1].parse().ok()).collect()
}

pub fn stub_dut(module_header: &str) -> String {
    let mut header = module_header.trim_end().to_string();
    if !header.ends_with(';') {
        header.push(';');
    }
    format!("{header}\nendmodule\n")
}

fn anchor_line(line: &str, anchor: &str) -> bool {
    line.trim_start().starts_with(anchor)
}

fn find_region(source: &str, anchors: Anchors) -> Result<Option<(usize, usize)>, SpliceError> {
    // byte offsets: end of the begin-marker line, start of the end-marker line
    let mut begin = None;
    let mut offset = 0;
    for line in source.split_inclusive('\n') {
        if begin.is_none() && anchor_line(line, anchors.begin) {
            begin = Some(offset + line.len());
        } else if anchor_line(line, anchors.end) {
            return match begin {
                Some(b) => Ok(Some((b, offset))),
                None => Err(SpliceError::StrayEndAnchor(anchors.end)),
            };
        }
        offset += line.len();
    }
    match begin {
        Some(_) => Err(SpliceError::UnclosedAnchor(anchors.begin)),
        None => Ok(None),
    }
}

/// The text between the anchor lines of a full source file.
pub fn core_region(source: &str, anchors: Anchors) -> Result<&str, SpliceError> {
    match find_region(source, anchors)? {
        Some((b, e)) => Ok(&source[b..e]),
        None => Err(SpliceError::MissingAnchor(anchors.begin)),
    }
}

/// Core code from a model reply: the anchored region when the reply carries
/// the markers (e.g. it rewrote the whole file), otherwise the whole reply.
pub fn extract_core(code: &str, anchors: Anchors) -> Result<String, SpliceError> {
    match find_region(code, anchors)? {
        Some((b, e)) => Ok(code[b..e].to_string()),
        None => Ok(code.to_string()),
    }
}

/// Replaces the anchored region of `skeleton` with `core`, leaving every
/// byte outside the region untouched.
pub fn splice(skeleton: &str, anchors: Anchors, core: &str) -> Result<String, SpliceError> {
    let (b, e) = find_region(skeleton, anchors)?.ok_or(SpliceError::MissingAnchor(anchors.begin))?;
    let mut out = String::with_capacity(skeleton.len() + core.len() + 1);
    out.push_str(&skeleton[..b]);
    let core = core.trim_matches('\n');
    if !core.is_empty() {
        out.push_str(core);
        out.push('\n');
    }
    out.push_str(&skeleton[e..]);
    Ok(out)
}

fn decl(range: &Option<String>, signed: bool) -> String {
    let mut s = String::new();
    if signed {
        s.push_str(" signed");
    }
    if let Some(r) = range {
        s.push(' ');
        s.push_str(r);
    }
    s
}

/// Driver skeleton: DUT instance, optional free-running clock, a `dump` task
/// writing one record line, and an empty core region inside the stimulus
/// `initial` block.
pub fn driver_skeleton(iface: &ModuleInterface) -> String {
    let clock = iface.clock().map(|p| p.name.clone());
    let dumped: Vec<_> = iface.ports.iter().filter(|p| Some(&p.name) != clock.as_ref()).collect();
    let mut s = String::new();
    s.push_str("`timescale 1ns/1ps\n\nmodule tb;\n");
    if let Some(clk) = &clock {
        let _ = writeln!(s, "    reg {clk} = 1'b0;");
        let _ = writeln!(s, "    always #{CLOCK_HALF_PERIOD} {clk} = ~{clk};");
    }
    for p in &dumped {
        let kind = if p.dir == PortDir::Input { "reg" } else { "wire" };
        let _ = writeln!(s, "    {kind}{} {};", decl(&p.range, p.signed), p.name);
    }
    s.push_str("    integer dump_fd;\n    integer scenario;\n\n");
    let conns: Vec<String> = iface.ports.iter().map(|p| format!(".{0}({0})", p.name)).collect();
    let _ = writeln!(s, "    {} dut (\n        {}\n    );\n", iface.name, conns.join(",\n        "));

    let fmt: Vec<String> = dumped.iter().map(|p| format!("{} = %0d", p.name)).collect();
    let args: Vec<&str> = dumped.iter().map(|p| p.name.as_str()).collect();
    s.push_str("    task dump;\n        begin\n");
    let _ = writeln!(
        s,
        "            $fdisplay(dump_fd, \"scenario: %0d, {}\", scenario, {});",
        fmt.join(", "),
        args.join(", ")
    );
    s.push_str("        end\n    endtask\n\n");
    s.push_str("    initial begin\n");
    let _ = writeln!(s, "        dump_fd = $fopen(\"{SIGNAL_DUMP_FILE}\", \"w\");");
    s.push_str("        scenario = 0;\n");
    let _ = writeln!(s, "        {}\n        {}", DRIVER_ANCHORS.begin, DRIVER_ANCHORS.end);
    s.push_str("        $fclose(dump_fd);\n        $finish;\n    end\nendmodule\n");
    s
}

fn py_widths<'a>(ports: impl Iterator<Item = &'a crate::task::Port>) -> String {
    let items: Vec<String> = ports
        .map(|p| match p.width() {
            Some(w) => format!("\"{}\": {w}", p.name),
            None => format!("\"{}\": None", p.name),
        })
        .collect();
    format!("{{{}}}", items.join(", "))
}

/// Checker skeleton: dump parser and `SCENARIO <i> PASS|FAIL` emitter around
/// a core region that must define `ReferenceModel.check(rec) -> bool`.
pub fn checker_skeleton(iface: &ModuleInterface, n_scenarios: usize) -> String {
    let clock = iface.clock().map(|p| p.name.clone());
    let inputs = py_widths(iface.inputs().filter(|p| Some(&p.name) != clock.as_ref()));
    let outputs = py_widths(iface.outputs());
    format!(
        r#"#!/usr/bin/env python3
# Checker for the signal dump written by the driver.
# Usage: checker.py <signal dump>
import sys

SCENARIO_COUNT = {n_scenarios}
INPUTS = {inputs}
OUTPUTS = {outputs}


def mask(value, width):
    return value & ((1 << width) - 1)


{begin}
{end}


def parse_value(text):
    try:
        return int(text)
    except ValueError:
        return None


def read_records(path):
    records = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line.startswith("scenario:"):
                continue
            fields = line.split(",")
            rec = {{"scenario": int(fields[0].split(":", 1)[1])}}
            for field in fields[1:]:
                name, _, value = field.partition("=")
                rec[name.strip()] = parse_value(value.strip())
            records.append(rec)
    return records


def main():
    records = read_records(sys.argv[1])
    model = ReferenceModel()
    verdicts = [None] * SCENARIO_COUNT
    for rec in records:
        index = rec["scenario"]
        ok = bool(model.check(rec))
        if 0 <= index < SCENARIO_COUNT:
            verdicts[index] = ok if verdicts[index] is None else (verdicts[index] and ok)
    for index in range(SCENARIO_COUNT):
        print("SCENARIO %d %s" % (index, "PASS" if verdicts[index] else "FAIL"))


if __name__ == "__main__":
    main()
"#,
        begin = CHECKER_ANCHORS.begin,
        end = CHECKER_ANCHORS.end,
    )
}

/// Indicates a driver core was cut off: unbalanced block keywords.
pub fn looks_truncated_verilog(core: &str) -> bool {
    static WORDS: LazyLock<Regex> =
        LazyLock::new(|| Regex::new(r"\b(begin|end|fork|join|join_any|join_none|case|casez|casex|endcase)\b").unwrap());
    let stripped = crate::task::strip_comments(core);
    let (mut blocks, mut forks, mut cases) = (0i32, 0i32, 0i32);
    for m in WORDS.find_iter(&stripped) {
        match m.as_str() {
            "begin" => blocks += 1,
            "end" => blocks -= 1,
            "fork" => forks += 1,
            "join" | "join_any" | "join_none" => forks -= 1,
            "case" | "casez" | "casex" => cases += 1,
            "endcase" => cases -= 1,
            _ => {}
        }
    }
    blocks > 0 || forks > 0 || cases > 0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::CircuitKind;

    fn and_spec() -> TaskSpec {
        TaskSpec::new("and", "AND gate", "module top_module(input a, input b, output out);", CircuitKind::Combinational)
            .unwrap()
    }

    fn scenarios(n: usize) -> Vec<ScenarioDescriptor> {
        (0..n).map(|i| ScenarioDescriptor { index: i, name: format!("s{i}"), description: "d".into() }).collect()
    }

    #[test]
    fn driver_skeleton_shape() {
        let iface = and_spec().interface().unwrap();
        let d = driver_skeleton(&iface);
        assert!(d.contains("reg a;"));
        assert!(d.contains("wire out;"));
        assert!(d.contains("top_module dut ("));
        assert!(d.contains("\"scenario: %0d, a = %0d, b = %0d, out = %0d\", scenario, a, b, out"));
        assert!(!d.contains("always #"));

        let seq = TaskSpec::new(
            "c",
            "counter",
            "module top_module(input clk, input reset, output reg [3:0] q);",
            CircuitKind::Sequential,
        )
        .unwrap();
        let d = driver_skeleton(&seq.interface().unwrap());
        assert!(d.contains("always #5 clk = ~clk;"));
        assert!(d.contains("wire [3:0] q;"));
        assert!(!d.contains("clk = %0d"));
    }

    #[test]
    fn splice_preserves_outside_bytes() {
        let iface = and_spec().interface().unwrap();
        let skel = checker_skeleton(&iface, 3);
        let a = splice(&skel, CHECKER_ANCHORS, "class ReferenceModel:\n    pass").unwrap();
        let b = splice(&a, CHECKER_ANCHORS, "class ReferenceModel:\n    x = 1").unwrap();
        let (pre, post) = skel.split_once("# CORE BEGIN").unwrap();
        assert!(b.starts_with(pre));
        assert!(b.ends_with(post.split_once("# CORE END").unwrap().1));
        assert_eq!(core_region(&b, CHECKER_ANCHORS).unwrap(), "class ReferenceModel:\n    x = 1\n");
    }

    #[test]
    fn extract_core_prefers_anchored_region() {
        let full = "module tb;\n// CORE BEGIN\n  a = 1;\n// CORE END\nendmodule\n";
        assert_eq!(extract_core(full, DRIVER_ANCHORS).unwrap(), "  a = 1;\n");
        assert_eq!(extract_core("  a = 1;", DRIVER_ANCHORS).unwrap(), "  a = 1;");
        assert_eq!(
            extract_core("// CORE BEGIN\n a = 1;", DRIVER_ANCHORS),
            Err(SpliceError::UnclosedAnchor("// CORE BEGIN"))
        );
        assert_eq!(extract_core("a\n// CORE END\n", DRIVER_ANCHORS), Err(SpliceError::StrayEndAnchor("// CORE END")));
        assert_eq!(splice("no anchors", DRIVER_ANCHORS, "x"), Err(SpliceError::MissingAnchor("// CORE BEGIN")));
    }

    #[test]
    fn assemble_and_scan_scenarios() {
        let core = "        scenario = 0; a = 0; b = 0; #10; dump;\n        scenario = 2; #10; dump;\n";
        let tb = Testbench::assemble(&and_spec(), scenarios(3), core, "class ReferenceModel:\n    pass\n", 4).unwrap();
        assert_eq!(tb.generation, 4);
        assert_eq!(tb.revision, 0);
        assert_eq!(tb.driver_scenario_indexes().into_iter().collect::<Vec<_>>(), [0, 2]);
        assert!(tb.checker_source.contains("SCENARIO_COUNT = 3"));
        let moved = tb.with_driver_core("scenario = 1;").unwrap();
        assert_eq!(moved.checker_source, tb.checker_source);
    }

    #[test]
    fn scenario_list_rules() {
        assert!(matches!(check_scenarios(&[]), Err(TestbenchError::NoScenarios)));
        let mut s = scenarios(2);
        s[1].index = 2;
        assert!(matches!(check_scenarios(&s), Err(TestbenchError::NonContiguous(2, 1))));
        let mut s = scenarios(2);
        s[1].name = "s0".into();
        assert!(matches!(check_scenarios(&s), Err(TestbenchError::DuplicateName(_))));
    }

    #[test]
    fn truncation_heuristic() {
        assert!(!looks_truncated_verilog("repeat (2) begin @(posedge clk); dump; end"));
        assert!(looks_truncated_verilog("repeat (2) begin @(posedge clk); dump;"));
        assert!(!looks_truncated_verilog("// begin\n a = 1;"));
    }

    #[test]
    fn stub_dut_closes_module() {
        assert_eq!(stub_dut("module m(input a)"), "module m(input a);\nendmodule\n");
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let tb = Testbench::assemble(&and_spec(), scenarios(1), "scenario = 0;", "pass", 0).unwrap();
        tb.save(dir.path()).unwrap();
        assert_eq!(Testbench::load(dir.path()).unwrap(), tb);
        assert!(dir.path().join("driver.v").is_file());
    }
}
