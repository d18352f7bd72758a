use super::{predict_linear, DesignMatrix, StatsError};
use crate::domain::AssessmentResult;
use serde::{Deserialize, Serialize};

/// Exact SHAP values of a linear model with feature-mean background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapReport {
    pub labels: Vec<String>,
    /// `attributions[i][j]`: contribution of feature j to row i.
    pub attributions: Vec<Vec<f64>>,
    /// Mean fitted value over the explained rows.
    pub base_value: f64,
    pub mean_abs: Vec<f64>,
    /// Feature indices sorted by decreasing mean |attribution|.
    pub ranking: Vec<usize>,
}

/// `attribution_ij = beta_j * (x_ij - mean_j)`, with column means over the
/// rows of `x`. For a linear model under feature independence these are
/// the exact Shapley values, and `base_value + sum_j attribution_ij = yhat_i`.
pub fn linear_shap(model: &AssessmentResult, x: &DesignMatrix) -> Result<ShapReport, StatsError> {
    if model.coefficients.len() != x.cols() {
        return Err(StatsError::Dimension(format!(
            "model has {} coefficients, design has {} columns",
            model.coefficients.len(),
            x.cols()
        )));
    }
    let n = x.rows();
    let k = x.feature_count();
    let yhat = predict_linear(&model.coefficients, x)?;
    let base_value = if n == 0 { 0.0 } else { yhat.iter().sum::<f64>() / n as f64 };
    let means: Vec<f64> = (1..x.cols())
        .map(|j| x.column(j).iter().sum::<f64>() / n.max(1) as f64)
        .collect();
    let attributions: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..k)
                .map(|j| model.coefficients[j + 1] * (x.get(i, j + 1) - means[j]))
                .collect()
        })
        .collect();
    let mean_abs: Vec<f64> = (0..k)
        .map(|j| attributions.iter().map(|row| row[j].abs()).sum::<f64>() / n.max(1) as f64)
        .collect();
    let mut ranking: Vec<usize> = (0..k).collect();
    ranking.sort_by(|&a, &b| mean_abs[b].total_cmp(&mean_abs[a]).then(a.cmp(&b)));
    Ok(ShapReport {
        labels: x.labels().to_vec(),
        attributions,
        base_value,
        mean_abs,
        ranking,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::ols_fit;

    fn fit_small() -> (AssessmentResult, DesignMatrix) {
        let x = DesignMatrix::with_intercept(
            vec![
                vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0],
                vec![1.0, 1.0, 0.0, 0.0, 1.0, 1.0],
            ],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let y = vec![1.0, 4.1, 2.9, 0.2, 3.8, 1.1];
        (ols_fit(&x, &y).unwrap(), x)
    }

    #[test]
    fn local_accuracy_and_centering() {
        let (fit, x) = fit_small();
        let report = linear_shap(&fit, &x).unwrap();
        for (i, row) in report.attributions.iter().enumerate() {
            let total: f64 = row.iter().sum();
            assert!((report.base_value + total - fit.fitted[i]).abs() < 1e-9);
        }
        // column 'a' mean is 0.5 so no row sits at the mean; build one that does
        let at_mean = DesignMatrix::with_intercept(vec![vec![0.5, 0.5], vec![1.0, 0.0]], vec!["a".into(), "b".into()]).unwrap();
        let r = linear_shap(&fit, &at_mean).unwrap();
        assert_eq!(r.attributions[0][0], 0.0);
        assert_eq!(r.attributions[1][0], 0.0);
    }

    #[test]
    fn layout_mismatch() {
        let (fit, _) = fit_small();
        let x = DesignMatrix::with_intercept(vec![vec![1.0, 2.0]], vec!["a".into()]).unwrap();
        assert!(linear_shap(&fit, &x).is_err());
    }
}
