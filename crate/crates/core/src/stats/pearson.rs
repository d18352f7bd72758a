use crate::domain::EmbeddingMatrix;
use serde::{Deserialize, Serialize};

/// Symmetric k×k correlation matrix. Entries touching a zero-variance column
/// are `None` rather than NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub values: Vec<Vec<Option<f64>>>,
}

impl CorrelationMatrix {
    pub fn size(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i][j]
    }

    /// Fraction of off-diagonal pairs (i < j) with a defined |r| below
    /// `threshold`, over all pairs. `None` when there are no pairs.
    pub fn fraction_below(&self, threshold: f64) -> Option<f64> {
        let k = self.size();
        let pairs = k * k.saturating_sub(1) / 2;
        if pairs == 0 {
            return None;
        }
        let mut below = 0usize;
        for i in 0..k {
            for j in i + 1..k {
                if matches!(self.values[i][j], Some(r) if r.abs() < threshold) {
                    below += 1;
                }
            }
        }
        Some(below as f64 / pairs as f64)
    }
}

/// Pearson correlations between columns, each unordered pair computed once.
pub fn pearson_columns(columns: &[Vec<f64>]) -> CorrelationMatrix {
    let k = columns.len();
    let centered: Vec<Option<(Vec<f64>, f64)>> = columns
        .iter()
        .map(|c| {
            let n = c.len() as f64;
            if c.is_empty() {
                return None;
            }
            let mean = c.iter().sum::<f64>() / n;
            let d: Vec<f64> = c.iter().map(|v| v - mean).collect();
            let ss: f64 = d.iter().map(|v| v * v).sum();
            (ss > 0.0).then(|| (d, ss.sqrt()))
        })
        .collect();
    let mut values = vec![vec![None; k]; k];
    for i in 0..k {
        let Some((di, ni)) = &centered[i] else { continue };
        values[i][i] = Some(1.0);
        for j in i + 1..k {
            let Some((dj, nj)) = &centered[j] else { continue };
            let dot: f64 = di.iter().zip(dj).map(|(a, b)| a * b).sum();
            let r = (dot / (ni * nj)).clamp(-1.0, 1.0);
            values[i][j] = Some(r);
            values[j][i] = Some(r);
        }
    }
    CorrelationMatrix { values }
}

/// Correlations between the mode-imputed embedding columns.
pub fn pearson_matrix(embedding: &EmbeddingMatrix) -> CorrelationMatrix {
    pearson_columns(&embedding.imputed_columns())
}
