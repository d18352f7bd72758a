use super::LoopError;
use crate::domain::Metrics;
use crate::stats::Correction;
use serde::{Deserialize, Serialize};

/// Validation metric gating acceptance of a candidate set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcceptMetric {
    #[default]
    Rmse,
    Mae,
    R2,
}

/// Relative margin a candidate must clear to count as an improvement.
pub const IMPROVEMENT_EPS: f64 = 1e-6;

impl AcceptMetric {
    pub fn value(self, m: &Metrics) -> f64 {
        match self {
            AcceptMetric::Rmse => m.rmse,
            AcceptMetric::Mae => m.mae,
            AcceptMetric::R2 => m.r2,
        }
    }

    /// Strict improvement of `candidate` over `incumbent`.
    pub fn improves(self, candidate: &Metrics, incumbent: &Metrics) -> bool {
        let (c, i) = (self.value(candidate), self.value(incumbent));
        let margin = IMPROVEMENT_EPS * i.abs();
        match self {
            AcceptMetric::Rmse | AcceptMetric::Mae => c < i - margin,
            AcceptMetric::R2 => c > i + margin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopConfig {
    /// Hypothesis set size.
    pub k: usize,
    /// Maximum number of refinement iterations after the initial set.
    pub max_iters: u32,
    pub alpha: f64,
    pub p_explore: f64,
    pub accept_metric: AcceptMetric,
    /// Extra candidate draws after a rejected one, per iteration.
    pub retries_per_iter: u32,
    /// Consecutive non-improving iterations tolerated before stopping.
    pub patience: u32,
    pub seed: u64,
    pub correction: Correction,
    /// Name in the model registry.
    pub model: String,
    pub domain_context: String,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            k: 50,
            max_iters: 10,
            alpha: 0.05,
            p_explore: 0.1,
            accept_metric: AcceptMetric::Rmse,
            retries_per_iter: 3,
            patience: 5,
            seed: 0,
            correction: Correction::None,
            model: "ols".into(),
            domain_context: crate::hypogen::DEFAULT_DOMAIN_CONTEXT.into(),
        }
    }
}

impl LoopConfig {
    /// Field-level checks. `alpha = 1` is allowed: it disables pruning.
    pub fn validate(&self) -> Result<(), LoopError> {
        let bad = |field: &str, msg: String| Err(LoopError::Config(format!("loop.{field}: {msg}")));
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha", format!("must be in (0, 1], got {}", self.alpha));
        }
        if self.k < 2 {
            return bad("k", format!("must be >= 2, got {}", self.k));
        }
        if self.max_iters < 1 {
            return bad("max_iters", "must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.p_explore) {
            return bad("p_explore", format!("must be in [0, 1], got {}", self.p_explore));
        }
        if self.patience < 1 {
            return bad("patience", "must be >= 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rmse: f64, r2: f64) -> Metrics {
        Metrics { rmse, mae: rmse, r2 }
    }

    #[test]
    fn improvement_is_strict_with_margin() {
        let inc = m(1.0, 0.5);
        assert!(!AcceptMetric::Rmse.improves(&m(1.0, 0.5), &inc));
        assert!(!AcceptMetric::Rmse.improves(&m(1.0 - 5e-7, 0.5), &inc));
        assert!(AcceptMetric::Rmse.improves(&m(0.99, 0.5), &inc));
        assert!(AcceptMetric::R2.improves(&m(1.0, 0.6), &inc));
        assert!(!AcceptMetric::R2.improves(&m(1.0, 0.4), &inc));
    }

    #[test]
    fn validation_names_fields() {
        let err = LoopConfig { alpha: 0.0, ..LoopConfig::default() }.validate().unwrap_err();
        assert!(err.to_string().contains("loop.alpha"));
        assert!(LoopConfig { alpha: 1.0, ..LoopConfig::default() }.validate().is_ok());
        assert!(LoopConfig { k: 1, ..LoopConfig::default() }.validate().is_err());
        assert!(LoopConfig { max_iters: 0, ..LoopConfig::default() }.validate().is_err());
    }
}
