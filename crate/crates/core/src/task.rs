//! Task specifications and Verilog module-header parsing.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CircuitKind {
    #[serde(alias = "cmb", alias = "CMB")]
    Combinational,
    #[serde(alias = "seq", alias = "SEQ")]
    Sequential,
}

impl CircuitKind {
    /// Short group label used in result tables.
    pub fn group(self) -> &'static str {
        match self {
            CircuitKind::Combinational => "CMB",
            CircuitKind::Sequential => "SEQ",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PortDir {
    Input,
    Output,
    Inout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Port {
    pub name: String,
    pub dir: PortDir,
    /// Packed range as written, e.g. `[7:0]`.
    pub range: Option<String>,
    pub signed: bool,
}

impl Port {
    /// Bit width when the range bounds are integer literals.
    pub fn width(&self) -> Option<u32> {
        let Some(range) = &self.range else { return Some(1) };
        let inner = range.trim().strip_prefix('[')?.strip_suffix(']')?;
        let (msb, lsb) = inner.split_once(':')?;
        let msb: i64 = msb.trim().parse().ok()?;
        let lsb: i64 = lsb.trim().parse().ok()?;
        Some((msb - lsb).unsigned_abs() as u32 + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleInterface {
    pub name: String,
    pub ports: Vec<Port>,
}

const CLOCK_NAMES: &[&str] = &["clk", "clock", "clk_i", "i_clk", "clk_in"];

impl ModuleInterface {
    pub fn clock(&self) -> Option<&Port> {
        self.ports
            .iter()
            .find(|p| p.dir == PortDir::Input && CLOCK_NAMES.contains(&p.name.to_ascii_lowercase().as_str()))
    }

    pub fn inputs(&self) -> impl Iterator<Item = &Port> {
        self.ports.iter().filter(|p| p.dir == PortDir::Input)
    }

    pub fn outputs(&self) -> impl Iterator<Item = &Port> {
        self.ports.iter().filter(|p| p.dir != PortDir::Input)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaskError {
    #[error("task {0}: spec text is empty")]
    EmptySpec(String),
    #[error("task {0}: module header is empty")]
    EmptyHeader(String),
    #[error("module header: {0}")]
    Header(String),
    #[error("task {id}: declared {kind:?} but the header {detail}")]
    KindMismatch { id: String, kind: CircuitKind, detail: &'static str },
}

/// The natural-language design specification, the only functional input to
/// testbench generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub problem_id: String,
    pub spec_text: String,
    pub module_header: String,
    pub circuit_kind: CircuitKind,
}

impl TaskSpec {
    pub fn new(
        problem_id: impl Into<String>,
        spec_text: impl Into<String>,
        module_header: impl Into<String>,
        circuit_kind: CircuitKind,
    ) -> Result<Self, TaskError> {
        let spec = Self {
            problem_id: problem_id.into(),
            spec_text: spec_text.into(),
            module_header: module_header.into(),
            circuit_kind,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        if self.spec_text.trim().is_empty() {
            return Err(TaskError::EmptySpec(self.problem_id.clone()));
        }
        if self.module_header.trim().is_empty() {
            return Err(TaskError::EmptyHeader(self.problem_id.clone()));
        }
        let iface = self.interface()?;
        match (self.circuit_kind, iface.clock().is_some()) {
            (CircuitKind::Sequential, false) => Err(TaskError::KindMismatch {
                id: self.problem_id.clone(),
                kind: self.circuit_kind,
                detail: "has no clock input",
            }),
            (CircuitKind::Combinational, true) => Err(TaskError::KindMismatch {
                id: self.problem_id.clone(),
                kind: self.circuit_kind,
                detail: "has a clock input",
            }),
            _ => Ok(()),
        }
    }

    pub fn interface(&self) -> Result<ModuleInterface, TaskError> {
        parse_module_header(&self.module_header)
    }
}

static COMMENTS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)//[^\n]*|/\*.*?\*/").unwrap());
static HEADER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)\bmodule\s+[A-Za-z_]\w*\s*(?:#\s*\(.*?\)\s*)?\(.*?\)\s*;").unwrap());
static MODULE_NAME: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\bmodule\s+([A-Za-z_]\w*)").unwrap());
static IDENT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[A-Za-z_]\w*$").unwrap());

pub fn strip_comments(text: &str) -> String {
    COMMENTS.replace_all(text, " ").into_owned()
}

/// Finds the first ANSI module header (`module name(...);`) in free text.
pub fn find_module_header(text: &str) -> Option<String> {
    HEADER.find(text).map(|m| m.as_str().to_string())
}

/// Parses an ANSI-style module header into its port list.
pub fn parse_module_header(header: &str) -> Result<ModuleInterface, TaskError> {
    let err = |m: &str| TaskError::Header(m.to_string());
    let text = COMMENTS.replace_all(header, " ");
    let caps = MODULE_NAME.captures(&text).ok_or_else(|| err("missing 'module <name>'"))?;
    let name = caps.get(1).expect("group 1").as_str();
    let after_name = &text[caps.get(0).expect("match").end()..];
    let after_params = skip_parameter_list(after_name).ok_or_else(|| err("unbalanced parameter list"))?;
    let open = after_params.find('(').ok_or_else(|| err("missing port list"))?;
    let body_start = open + 1;
    let mut depth = 1usize;
    let mut body_end = None;
    for (i, c) in after_params[body_start..].char_indices() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth == 0 {
                    body_end = Some(body_start + i);
                    break;
                }
            }
            _ => {}
        }
    }
    let body = &after_params[body_start..body_end.ok_or_else(|| err("unbalanced port list"))?];

    let mut ports = Vec::new();
    let mut current: Option<(PortDir, Option<String>, bool)> = None;
    for item in split_top_level(body) {
        let item = item.trim();
        if item.is_empty() {
            continue;
        }
        let mut tokens = tokenize_port(item);
        let dir = match tokens.first().map(String::as_str) {
            Some("input") => Some(PortDir::Input),
            Some("output") => Some(PortDir::Output),
            Some("inout") => Some(PortDir::Inout),
            _ => None,
        };
        if let Some(dir) = dir {
            tokens.remove(0);
            let mut range = None;
            let mut signed = false;
            tokens.retain(|t| match t.as_str() {
                "wire" | "reg" | "logic" | "var" => false,
                "signed" => {
                    signed = true;
                    false
                }
                t if t.starts_with('[') => {
                    range = Some(t.to_string());
                    false
                }
                _ => true,
            });
            current = Some((dir, range, signed));
        }
        let Some((dir, range, signed)) = current.clone() else {
            return Err(err(&format!("port '{item}' has no direction (non-ANSI headers are unsupported)")));
        };
        let name = tokens.last().ok_or_else(|| err(&format!("port '{item}' has no name")))?;
        if !IDENT.is_match(name) {
            return Err(err(&format!("invalid port name '{name}'")));
        }
        ports.push(Port { name: name.clone(), dir, range, signed });
    }
    if ports.is_empty() {
        return Err(err("no ports"));
    }
    Ok(ModuleInterface { name: name.to_string(), ports })
}

fn skip_parameter_list(s: &str) -> Option<&str> {
    let t = s.trim_start();
    let Some(p) = t.strip_prefix('#') else { return Some(t) };
    let p = p.trim_start().strip_prefix('(')?;
    let mut depth = 1;
    for (i, c) in p.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&p[i + 1..]);
                }
            }
            _ => {}
        }
    }
    None
}

fn split_top_level(body: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut last = 0;
    for (i, c) in body.char_indices() {
        match c {
            '[' | '(' | '{' => depth += 1,
            ']' | ')' | '}' => depth -= 1,
            ',' if depth == 0 => {
                out.push(&body[last..i]);
                last = i + 1;
            }
            _ => {}
        }
    }
    out.push(&body[last..]);
    out
}

fn tokenize_port(item: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut chars = item.chars().peekable();
    let mut cur = String::new();
    while let Some(c) = chars.next() {
        if c == '[' {
            if !cur.is_empty() {
                tokens.push(std::mem::take(&mut cur));
            }
            let mut range = String::from("[");
            for d in chars.by_ref() {
                if !d.is_whitespace() {
                    range.push(d);
                }
                if d == ']' {
                    break;
                }
            }
            tokens.push(range);
        } else if c.is_whitespace() {
            if !cur.is_empty() {
                tokens.push(std::mem::take(&mut cur));
            }
        } else {
            cur.push(c);
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    tokens
}
