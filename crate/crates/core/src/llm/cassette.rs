//! Record/replay store for LLM responses.
//!
//! A cassette is a directory holding one JSON file per run step (for example
//! `driver.g0.json`). Each file maps a request fingerprint to the recorded
//! response:
//!
//! ```json
//! { "<sha256>": { "content": "...", "prompt_tokens": 12, "completion_tokens": 40 } }
//! ```
//!
//! Fingerprints are computed over a canonical serialization of the model id,
//! the temperature and the exact turn bytes, so any prompt change produces a
//! new key.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::types::LlmRequest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CassetteMode {
    /// Serve hits from the cassette, call the provider on a miss and persist the answer.
    Record,
    /// Serve only from the cassette; a miss is an error.
    Replay,
    /// Always call the provider; nothing is read or written.
    Passthrough,
}

impl std::str::FromStr for CassetteMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "record" => Ok(Self::Record),
            "replay" => Ok(Self::Replay),
            "passthrough" | "live" => Ok(Self::Passthrough),
            other => Err(format!("unknown cassette mode '{other}' (record|replay|passthrough)")),
        }
    }
}

impl std::fmt::Display for CassetteMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Record => "record",
            Self::Replay => "replay",
            Self::Passthrough => "passthrough",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub content: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Error)]
pub enum CassetteError {
    #[error("cassette directory {0} does not exist")]
    NotFound(PathBuf),
    #[error("cassette i/o on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cassette file {path} is not valid: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("fingerprint {0} recorded in two step files")]
    Duplicate(String),
}

type StepFile = BTreeMap<String, CassetteEntry>;

#[derive(Debug, Clone)]
pub struct Cassette {
    mode: CassetteMode,
    dir: Option<PathBuf>,
    steps: BTreeMap<String, StepFile>,
    index: HashMap<String, String>,
}

impl Cassette {
    /// A cassette that lives only in memory.
    pub fn in_memory(mode: CassetteMode) -> Self {
        Self { mode, dir: None, steps: BTreeMap::new(), index: HashMap::new() }
    }

    /// A cassette backed by `dir`. In replay mode the directory must exist; in
    /// record mode it is created on first write.
    pub fn open(dir: impl Into<PathBuf>, mode: CassetteMode) -> Result<Self, CassetteError> {
        let dir = dir.into();
        let mut cassette = Self { mode, dir: Some(dir.clone()), ..Self::in_memory(mode) };
        if mode == CassetteMode::Passthrough {
            return Ok(cassette);
        }
        if !dir.is_dir() {
            if mode == CassetteMode::Replay {
                return Err(CassetteError::NotFound(dir));
            }
            return Ok(cassette);
        }
        let read_dir = fs::read_dir(&dir).map_err(|source| CassetteError::Io { path: dir.clone(), source })?;
        let mut paths: Vec<PathBuf> = read_dir
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
            .collect();
        paths.sort();
        for path in paths {
            let text = fs::read_to_string(&path).map_err(|source| CassetteError::Io { path: path.clone(), source })?;
            let file: StepFile =
                serde_json::from_str(&text).map_err(|source| CassetteError::Parse { path: path.clone(), source })?;
            let step = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            for fp in file.keys() {
                if cassette.index.insert(fp.clone(), step.clone()).is_some() {
                    return Err(CassetteError::Duplicate(fp.clone()));
                }
            }
            cassette.steps.insert(step, file);
        }
        Ok(cassette)
    }

    pub fn mode(&self) -> CassetteMode {
        self.mode
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn get(&self, fingerprint: &str) -> Option<&CassetteEntry> {
        let step = self.index.get(fingerprint)?;
        self.steps.get(step)?.get(fingerprint)
    }

    /// Records an entry under `step` and, for directory-backed cassettes,
    /// rewrites that step's file before returning.
    pub fn insert(&mut self, step: &str, fingerprint: &str, entry: CassetteEntry) -> Result<(), CassetteError> {
        let step = sanitize_step(step);
        if let Some(previous) = self.index.get(fingerprint) {
            if previous != &step {
                if let Some(file) = self.steps.get_mut(previous) {
                    file.remove(fingerprint);
                }
            }
        }
        self.index.insert(fingerprint.to_string(), step.clone());
        self.steps.entry(step.clone()).or_default().insert(fingerprint.to_string(), entry);
        self.flush_step(&step)
    }

    fn flush_step(&self, step: &str) -> Result<(), CassetteError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        fs::create_dir_all(dir).map_err(|source| CassetteError::Io { path: dir.clone(), source })?;
        let path = dir.join(format!("{step}.json"));
        let file = self.steps.get(step).cloned().unwrap_or_default();
        let mut text = serde_json::to_string_pretty(&file).expect("cassette entries serialize");
        text.push('\n');
        write_atomic(&path, text.as_bytes()).map_err(|source| CassetteError::Io { path, source })
    }
}

fn sanitize_step(step: &str) -> String {
    let cleaned: String = step
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '_' || c == '-' { c } else { '_' })
        .collect();
    if cleaned.is_empty() { "untagged".to_string() } else { cleaned }
}

/// Writes via a temporary file and rename so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp{}",
        path.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_default(),
        std::process::id()
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

#[derive(Serialize)]
struct CanonicalTurn<'a> {
    content: &'a str,
    role: &'a str,
}

#[derive(Serialize)]
struct CanonicalRequest<'a> {
    model_id: &'a str,
    temperature: String,
    turns: Vec<CanonicalTurn<'a>>,
}

/// Stable digest of `(model_id, turns, temperature)`. Turn content is hashed
/// verbatim; whitespace is significant.
pub fn fingerprint(request: &LlmRequest) -> String {
    let canonical = CanonicalRequest {
        model_id: &request.model_id,
        temperature: format!("{:.4}", request.temperature),
        turns: request
            .turns
            .iter()
            .map(|t| CanonicalTurn { content: &t.content, role: t.role.as_str() })
            .collect(),
    };
    let bytes = serde_json::to_vec(&canonical).expect("canonical request serializes");
    hex::encode(Sha256::digest(&bytes))
}
