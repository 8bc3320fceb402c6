//! Text formats exchanged with generated artifacts: the driver's signal dump
//! and the checker's `SCENARIO <i> PASS|FAIL` line protocol.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub scenario_index: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolViolation {
    #[error("malformed protocol line '{0}'")]
    Malformed(String),
    #[error("scenario {index} out of range (testbench has {n})")]
    OutOfRange { index: usize, n: usize },
    #[error("scenario {0} reported more than once")]
    Duplicate(usize),
    #[error("no verdict for scenario(s) {0:?}")]
    Missing(Vec<usize>),
}

/// Parses checker stdout. Lines not starting with `SCENARIO` are ignored so a
/// checker may print diagnostics; every `SCENARIO` line must be exact.
pub fn parse_checker_protocol(stdout: &str, n_scenarios: usize) -> Result<Vec<ScenarioOutcome>, ProtocolViolation> {
    let mut seen: Vec<Option<bool>> = vec![None; n_scenarios];
    for raw in stdout.lines() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if !line.starts_with("SCENARIO") {
            continue;
        }
        let malformed = || ProtocolViolation::Malformed(line.to_string());
        let mut parts = line.split(' ');
        let (Some("SCENARIO"), Some(idx), Some(word), None) = (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(malformed());
        };
        if idx.is_empty() || !idx.bytes().all(|b| b.is_ascii_digit()) {
            return Err(malformed());
        }
        let index: usize = idx.parse().map_err(|_| malformed())?;
        let passed = match word {
            "PASS" => true,
            "FAIL" => false,
            _ => return Err(malformed()),
        };
        let slot = seen.get_mut(index).ok_or(ProtocolViolation::OutOfRange { index, n: n_scenarios })?;
        if slot.is_some() {
            return Err(ProtocolViolation::Duplicate(index));
        }
        *slot = Some(passed);
    }
    let missing: Vec<usize> = seen.iter().enumerate().filter(|(_, v)| v.is_none()).map(|(i, _)| i).collect();
    if !missing.is_empty() {
        return Err(ProtocolViolation::Missing(missing));
    }
    Ok(seen
        .into_iter()
        .enumerate()
        .map(|(scenario_index, v)| ScenarioOutcome { scenario_index, passed: v.expect("checked") })
        .collect())
}

/// One line of the signal dump: `scenario: <n>, <sig> = <value>, ...`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignalRecord {
    pub scenario: usize,
    pub values: Vec<(String, String)>,
}

impl SignalRecord {
    pub fn get(&self, name: &str) -> Option<&str> {
        self.values.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_str())
    }

    /// Integer value; `None` for missing signals and x/z values.
    pub fn int(&self, name: &str) -> Option<i128> {
        self.get(name)?.parse().ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("signal dump line {line}: {reason}")]
pub struct DumpError {
    pub line: usize,
    pub reason: String,
}

pub fn parse_signal_dump(text: &str) -> Result<Vec<SignalRecord>, DumpError> {
    let mut records = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let err = |reason: &str| DumpError { line: no + 1, reason: reason.to_string() };
        let mut fields = line.split(',');
        let head = fields.next().unwrap_or_default();
        let idx = head.strip_prefix("scenario:").ok_or_else(|| err("expected 'scenario:' prefix"))?;
        let scenario = idx.trim().parse().map_err(|_| err("scenario index is not an integer"))?;
        let mut values = Vec::new();
        for field in fields {
            let (name, value) = field.split_once('=').ok_or_else(|| err("expected '<signal> = <value>'"))?;
            let name = name.trim();
            if name.is_empty() {
                return Err(err("empty signal name"));
            }
            values.push((name.to_string(), value.trim().to_string()));
        }
        records.push(SignalRecord { scenario, values });
    }
    Ok(records)
}

/// Distinct scenario indexes present in a dump, ascending.
pub fn dump_scenarios(records: &[SignalRecord]) -> Vec<usize> {
    let mut v: Vec<usize> = records.iter().map(|r| r.scenario).collect();
    v.sort_unstable();
    v.dedup();
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn protocol_parse_orders_by_index() {
        let out = parse_checker_protocol("SCENARIO 1 FAIL\ndebug\nSCENARIO 0 PASS\n", 2).unwrap();
        assert_eq!(
            out,
            [ScenarioOutcome { scenario_index: 0, passed: true }, ScenarioOutcome { scenario_index: 1, passed: false }]
        );
    }

    #[test]
    fn protocol_violations() {
        assert_eq!(
            parse_checker_protocol("SCENARIO 0 PASS\nSCENARIO 1 PASS\nSCENARIO 1 FAIL\n", 2),
            Err(ProtocolViolation::Duplicate(1))
        );
        assert_eq!(parse_checker_protocol("SCENARIO 0 PASS\n", 3), Err(ProtocolViolation::Missing(vec![1, 2])));
        assert_eq!(parse_checker_protocol("SCENARIO 4 PASS\n", 2), Err(ProtocolViolation::OutOfRange { index: 4, n: 2 }));
        for bad in ["SCENARIO 0 pass", "SCENARIO  0 PASS", "SCENARIO 0 PASS extra", "SCENARIO +0 PASS", "SCENARIOS 0 PASS"] {
            assert!(matches!(parse_checker_protocol(bad, 1), Err(ProtocolViolation::Malformed(_))), "{bad}");
        }
    }

    #[test]
    fn dump_parse() {
        let text = "scenario: 0, a = 1, b = 0, out = 0\nscenario: 1, a = 1, b = 1, out = x\n\nscenario: 2, a = 0, b = 0, out = 0\n";
        let recs = parse_signal_dump(text).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[1].int("a"), Some(1));
        assert_eq!(recs[1].int("out"), None);
        assert_eq!(recs[1].get("out"), Some("x"));
        assert_eq!(dump_scenarios(&recs), [0, 1, 2]);
        assert_eq!(parse_signal_dump("a = 1").unwrap_err().line, 1);
        assert!(parse_signal_dump("scenario: 0, a 1").is_err());
    }
}
