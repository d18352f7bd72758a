//! Interpretable models behind a common trait, looked up by name.

use super::{ols_fit, predict_linear, DesignMatrix, StatsError};
use crate::domain::AssessmentResult;
use std::collections::BTreeMap;
use std::sync::Arc;

/// A model that yields fitted values plus per-feature significance.
pub trait InterpretableModel: Send + Sync {
    fn name(&self) -> &'static str;

    fn assess(&self, x: &DesignMatrix, y: &[f64]) -> Result<AssessmentResult, StatsError>;

    fn predict(&self, fit: &AssessmentResult, x: &DesignMatrix) -> Result<Vec<f64>, StatsError>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct OlsModel;

impl InterpretableModel for OlsModel {
    fn name(&self) -> &'static str {
        "ols"
    }

    fn assess(&self, x: &DesignMatrix, y: &[f64]) -> Result<AssessmentResult, StatsError> {
        ols_fit(x, y)
    }

    fn predict(&self, fit: &AssessmentResult, x: &DesignMatrix) -> Result<Vec<f64>, StatsError> {
        predict_linear(&fit.coefficients, x)
    }
}

pub type ModelFactory = Box<dyn Fn() -> Arc<dyn InterpretableModel> + Send + Sync>;

pub struct ModelRegistry {
    factories: BTreeMap<String, ModelFactory>,
}

impl ModelRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    /// Registry with the built-in models (`ols`).
    pub fn with_defaults() -> Self {
        let mut reg = Self::empty();
        reg.register("ols", Box::new(|| Arc::new(OlsModel)));
        reg
    }

    /// Adds or replaces a model under `name`.
    pub fn register(&mut self, name: &str, factory: ModelFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn create(&self, name: &str) -> Result<Arc<dyn InterpretableModel>, StatsError> {
        self.factories
            .get(name)
            .map(|f| f())
            .ok_or_else(|| StatsError::UnknownModel(name.to_string()))
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }
}

impl Default for ModelRegistry {
    fn default() -> Self {
        Self::with_defaults()
    }
}
