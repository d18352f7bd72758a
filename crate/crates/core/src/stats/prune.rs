use crate::domain::AssessmentResult;
use serde::{Deserialize, Serialize};

/// Optional multiple-testing adjustment applied before pruning.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correction {
    #[default]
    None,
    Bonferroni,
}

pub fn adjust_p_values(p: &[f64], correction: Correction) -> Vec<f64> {
    match correction {
        Correction::None => p.to_vec(),
        Correction::Bonferroni => p.iter().map(|v| (v * p.len() as f64).min(1.0)).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneOutcome {
    /// Feature indices with p <= alpha, in original order.
    pub kept: Vec<usize>,
    /// Feature indices with p > alpha, in original order.
    pub pruned: Vec<usize>,
    pub m_pruned: usize,
}

/// Prunes every feature whose p-value is strictly greater than `alpha`.
pub fn significance_prune(result: &AssessmentResult, alpha: f64) -> PruneOutcome {
    let (kept, pruned): (Vec<usize>, Vec<usize>) =
        (0..result.p_values.len()).partition(|&j| result.p_values[j] <= alpha);
    let m_pruned = pruned.len();
    PruneOutcome {
        kept,
        pruned,
        m_pruned,
    }
}
