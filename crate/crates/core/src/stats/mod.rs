//! Deterministic numerics: OLS with t-tests, prediction metrics, Pearson
//! correlation, exact linear SHAP and significance pruning.
//!
//! Every routine sums in a fixed order so results are bitwise reproducible.

mod design;
mod metrics;
mod model;
mod ols;
mod pearson;
mod prune;
mod shap;
mod tdist;

pub use design::DesignMatrix;
pub use metrics::{prediction_metrics, MetricsError};
pub use model::{InterpretableModel, ModelFactory, ModelRegistry, OlsModel};
pub use ols::{ols_fit, predict_linear, ALIAS_TOLERANCE};
pub use pearson::{pearson_columns, pearson_matrix, CorrelationMatrix};
pub use prune::{adjust_p_values, significance_prune, Correction, PruneOutcome};
pub use shap::{linear_shap, ShapReport};
pub use tdist::student_t_two_sided_p;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StatsError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("residual degrees of freedom {dof} < 1 (n = {n}, rank = {rank})")]
    NoResidualDof { n: usize, rank: usize, dof: i64 },
    #[error("degrees of freedom must be >= 1, got {0}")]
    BadDof(f64),
    #[error("unknown model {0:?}")]
    UnknownModel(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}
