//! Task bundles on disk and labelled matrix corpora.
//!
//! A bundle directory holds a `task.json` manifest naming the spec, golden
//! and mutant files relative to the directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{EvalBundle, EvalError, Report};
use crate::task::{find_module_header, strip_comments, CircuitKind, TaskError, TaskSpec};
use crate::validator::{LabelledMatrix, MatrixError};

pub const MANIFEST_FILE: &str = "task.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleManifest {
    pub problem_id: String,
    pub circuit_kind: CircuitKind,
    pub spec_file: String,
    pub golden_file: String,
    #[serde(default)]
    pub mutant_files: Vec<String>,
    #[serde(default)]
    pub expected_mutant_verdicts: Option<Vec<Report>>,
    /// When absent the first module header in the spec text is used.
    #[serde(default)]
    pub module_header: Option<String>,
}

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: invalid manifest: {reason}")]
    Manifest { path: String, reason: String },
    #[error("{path}: {role} file '{file}' is missing")]
    MissingFile { path: String, role: &'static str, file: String },
    #[error("{path}: no module header in the manifest or the spec text")]
    NoHeader { path: String },
    #[error("{path}: {source}")]
    Task { path: String, source: TaskError },
    #[error("{path}: {source}")]
    Eval { path: String, source: EvalError },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskBundle {
    pub dir: PathBuf,
    pub manifest: BundleManifest,
    pub spec: TaskSpec,
    /// `None` when the bundle ships no mutants (generation only).
    pub eval: Option<EvalBundle>,
}

impl TaskBundle {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, BundleError> {
        let dir = dir.as_ref().to_path_buf();
        let at = dir.display().to_string();
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path)
            .map_err(|source| BundleError::Io { path: manifest_path.display().to_string(), source })?;
        let manifest: BundleManifest = serde_json::from_str(&text)
            .map_err(|e| BundleError::Manifest { path: at.clone(), reason: e.to_string() })?;
        if manifest.problem_id.trim().is_empty() {
            return Err(BundleError::Manifest { path: at, reason: "problem_id is empty".into() });
        }
        let read = |role: &'static str, file: &str| -> Result<String, BundleError> {
            fs::read_to_string(dir.join(file))
                .map_err(|_| BundleError::MissingFile { path: at.clone(), role, file: file.to_string() })
        };
        let spec_text = read("spec", &manifest.spec_file)?;
        let golden = read("golden", &manifest.golden_file)?;
        let mutants =
            manifest.mutant_files.iter().map(|f| read("mutant", f)).collect::<Result<Vec<_>, _>>()?;
        let header = match &manifest.module_header {
            Some(h) => h.clone(),
            None => find_module_header(&strip_comments(&spec_text)).ok_or(BundleError::NoHeader { path: at.clone() })?,
        };
        let spec = TaskSpec::new(&manifest.problem_id, spec_text, header, manifest.circuit_kind)
            .map_err(|source| BundleError::Task { path: at.clone(), source })?;
        let eval = if mutants.is_empty() {
            if manifest.expected_mutant_verdicts.as_ref().is_some_and(|v| !v.is_empty()) {
                return Err(BundleError::Manifest { path: at, reason: "expected verdicts without mutant files".into() });
            }
            None
        } else {
            Some(
                EvalBundle::new(golden, mutants, manifest.expected_mutant_verdicts.clone())
                    .map_err(|source| BundleError::Eval { path: at.clone(), source })?,
            )
        };
        Ok(Self { dir, manifest, spec, eval })
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("corpus entry {entry}: {reason}")]
    Schema { entry: String, reason: String },
    #[error("corpus entry {entry}: {source}")]
    Matrix { entry: String, source: MatrixError },
}

/// Reads every `*.json` file in `dir` (sorted by file name) as a
/// [`LabelledMatrix`].
pub fn load_matrix_corpus(dir: &Path) -> Result<Vec<LabelledMatrix>, CorpusError> {
    let io = |source| CorpusError::Io { path: dir.display().to_string(), source };
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let mut out = Vec::with_capacity(files.len());
    for path in files {
        let entry = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let text = fs::read_to_string(&path).map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
        let m: LabelledMatrix =
            serde_json::from_str(&text).map_err(|e| CorpusError::Schema { entry: entry.clone(), reason: e.to_string() })?;
        m.matrix.check().map_err(|source| CorpusError::Matrix { entry: entry.clone(), source })?;
        out.push(m);
    }
    Ok(out)
}
