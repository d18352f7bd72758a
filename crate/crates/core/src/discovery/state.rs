//! Run state, its checkpoint file and the audit event log.

use super::{LoopConfig, LoopError};
use crate::domain::{AssessmentResult, HypothesisId, HypothesisSet, Metrics};
use crate::hypogen::PromptMode;
use crate::ingest::SplitCounts;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

pub const STATE_SCHEMA_VERSION: u32 = 1;
pub const STATE_FILE: &str = "state.json";
pub const EVENTS_FILE: &str = "events.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIters,
    AllSignificant,
    PatienceExhausted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopInfo {
    pub reason: StopReason,
    pub iteration: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortKind {
    Generation,
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbortInfo {
    pub iteration: u32,
    pub kind: AbortKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunedEntry {
    pub id: HypothesisId,
    pub question: String,
    pub p_value: f64,
}

/// One candidate draw within an iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub mode: PromptMode,
    pub new_ids: Vec<HypothesisId>,
    pub val_metrics: Metrics,
    pub accepted: bool,
    pub endpoint_calls: usize,
    /// Per-question cache misses while embedding the candidate.
    pub question_misses: usize,
}

/// The incumbent after iteration `t`, with the attempts that led to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: u32,
    pub set: HypothesisSet,
    /// Train-split fit of `set`.
    pub assessment: AssessmentResult,
    pub val_metrics: Metrics,
    /// Whether `set` was newly accepted at `t` (always true at t = 0).
    pub accepted: bool,
    pub m_pruned: usize,
    pub pruned: Vec<PrunedEntry>,
    pub attempts: Vec<AttemptRecord>,
    pub patience_used: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub run_id: String,
    pub config: LoopConfig,
    pub dataset_hash: String,
    pub split_counts: SplitCounts,
    /// Order of the labelled covariate columns that follow the hypotheses.
    pub covariates: Vec<String>,
    pub iterations: Vec<IterationRecord>,
    pub stop: Option<StopInfo>,
    pub abort: Option<AbortInfo>,
}

impl RunState {
    pub fn incumbent(&self) -> Option<&IterationRecord> {
        self.iterations.last()
    }

    pub fn is_finished(&self) -> bool {
        self.stop.is_some() || self.abort.is_some()
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    schema_version: u32,
    integrity: String,
    state: RunState,
}

fn integrity_hash(state: &RunState) -> String {
    let compact = serde_json::to_vec(state).expect("state serializes");
    hex::encode(Sha256::digest(compact))
}

/// Serialized checkpoint document; deterministic for a given state.
pub fn checkpoint_bytes(state: &RunState) -> Vec<u8> {
    let doc = Checkpoint {
        schema_version: STATE_SCHEMA_VERSION,
        integrity: integrity_hash(state),
        state: state.clone(),
    };
    let mut bytes = serde_json::to_vec_pretty(&doc).expect("checkpoint serializes");
    bytes.push(b'\n');
    bytes
}

/// Writes `<dir>/state.json` via a temporary file and rename.
pub fn save_checkpoint(dir: &Path, state: &RunState) -> Result<(), LoopError> {
    fs::create_dir_all(dir)?;
    let tmp = dir.join(".state.json.tmp");
    fs::write(&tmp, checkpoint_bytes(state))?;
    fs::rename(tmp, dir.join(STATE_FILE))?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<RunState, LoopError> {
    let path = dir.join(STATE_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| LoopError::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| LoopError::Checkpoint(format!("{} is not valid JSON: {e}", path.display())))?;
    match value.get("schema_version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == STATE_SCHEMA_VERSION as u64 => {}
        Some(v) => {
            return Err(LoopError::Checkpoint(format!(
                "schema_version {v} is not supported (expected {STATE_SCHEMA_VERSION})"
            )))
        }
        None => {
            return Err(LoopError::Checkpoint(format!(
                "missing schema_version (expected {STATE_SCHEMA_VERSION})"
            )))
        }
    }
    let doc: Checkpoint = serde_json::from_value(value)
        .map_err(|e| LoopError::Checkpoint(format!("schema_version {STATE_SCHEMA_VERSION} layout mismatch: {e}")))?;
    let actual = integrity_hash(&doc.state);
    if actual != doc.integrity {
        return Err(LoopError::Integrity {
            expected: doc.integrity,
            actual,
        });
    }
    Ok(doc.state)
}

/// Append-only JSON-lines audit stream. The first line carries the schema.
pub struct EventLog {
    file: Option<fs::File>,
}

impl EventLog {
    pub fn disabled() -> Self {
        Self { file: None }
    }

    /// Starts a fresh log in `dir`, replacing any previous one.
    pub fn create(dir: &Path) -> Result<Self, LoopError> {
        fs::create_dir_all(dir)?;
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(dir.join(EVENTS_FILE))?;
        let mut log = Self { file: Some(file) };
        log.emit(serde_json::json!({ "event": "schema", "schema_version": STATE_SCHEMA_VERSION }))?;
        Ok(log)
    }

    pub fn emit(&mut self, event: serde_json::Value) -> Result<(), LoopError> {
        if let Some(f) = &mut self.file {
            writeln!(f, "{}", serde_json::to_string(&event).expect("event serializes"))?;
        }
        Ok(())
    }
}
