use super::StatsError;
use crate::domain::EmbeddingMatrix;

/// n×(p+1) regression design with a leading intercept column of ones.
/// Stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    columns: Vec<Vec<f64>>,
    labels: Vec<String>,
}

impl DesignMatrix {
    /// Prepends the intercept to the given feature columns.
    pub fn with_intercept(features: Vec<Vec<f64>>, labels: Vec<String>) -> Result<Self, StatsError> {
        if features.len() != labels.len() {
            return Err(StatsError::Dimension(format!(
                "{} feature columns but {} labels",
                features.len(),
                labels.len()
            )));
        }
        let n = features.first().map(Vec::len).unwrap_or(0);
        if let Some(bad) = features.iter().position(|c| c.len() != n) {
            return Err(StatsError::Dimension(format!(
                "feature column {bad} has {} rows, expected {n}",
                features[bad].len()
            )));
        }
        if features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite("design matrix"));
        }
        let mut columns = Vec::with_capacity(features.len() + 1);
        columns.push(vec![1.0; n]);
        columns.extend(features);
        Ok(Self { columns, labels })
    }

    /// Intercept-only design with `n` rows.
    pub fn intercept_only(n: usize) -> Self {
        Self {
            columns: vec![vec![1.0; n]],
            labels: Vec::new(),
        }
    }

    /// Mode-imputed embedding columns, optionally followed by covariates.
    pub fn from_embedding(
        embedding: &EmbeddingMatrix,
        labels: Vec<String>,
        covariates: Vec<(String, Vec<f64>)>,
    ) -> Result<Self, StatsError> {
        let mut features = embedding.imputed_columns();
        let mut labels = labels;
        for (name, col) in covariates {
            labels.push(name);
            features.push(col);
        }
        if features.is_empty() {
            return Ok(Self::intercept_only(embedding.rows()));
        }
        Self::with_intercept(features, labels)
    }

    pub fn rows(&self) -> usize {
        self.columns[0].len()
    }

    /// Number of columns including the intercept.
    pub fn cols(&self) -> usize {
        self.columns.len()
    }

    pub fn feature_count(&self) -> usize {
        self.columns.len() - 1
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.columns[j][i]
    }

    /// Labels of the feature columns (intercept excluded).
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        Self {
            columns: self
                .columns
                .iter()
                .map(|c| indices.iter().map(|&i| c[i]).collect())
                .collect(),
            labels: self.labels.clone(),
        }
    }
}
