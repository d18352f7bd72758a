//! The generate, embed, assess and prune loop with validation-gated
//! acceptance, checkpointing and the final report.

mod config;
mod report;
mod run;
mod state;

pub use config::{AcceptMetric, LoopConfig, IMPROVEMENT_EPS};
pub use report::{
    final_report, read_embedding_csv, read_snapshot_csv, write_embedding_csv, write_snapshot_csv, CoefficientRow,
    ReportBundle, ReportMetrics, SignificanceRow, CvPrediction, REPORT_SCHEMA_VERSION,
};
pub use run::{final_embedding, run, LoopContext};
pub use state::{
    checkpoint_bytes, load_checkpoint, save_checkpoint, AbortInfo, AbortKind, AttemptRecord, EventLog,
    IterationRecord, PrunedEntry, RunState, StopInfo, StopReason, EVENTS_FILE, STATE_FILE, STATE_SCHEMA_VERSION,
};

use crate::domain::DomainError;
use crate::stats::StatsError;

#[derive(Debug, thiserror::Error)]
pub enum LoopError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint integrity hash mismatch (recorded {expected}, computed {actual})")]
    Integrity { expected: String, actual: String },
    #[error("iteration {iteration} aborted ({kind:?}): {message}")]
    Aborted {
        iteration: u32,
        kind: AbortKind,
        message: String,
        state: Box<RunState>,
    },
    #[error("report: {0}")]
    Report(String),
}
