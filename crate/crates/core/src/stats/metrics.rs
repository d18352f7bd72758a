use crate::domain::Metrics;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("observed and predicted lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least two observations, got {0}")]
    TooFew(usize),
    #[error("r2 undefined for constant observations (rmse {rmse}, mae {mae})")]
    R2Undefined { rmse: f64, mae: f64 },
}

/// RMSE, MAE and R² = 1 - SS_res / SS_tot.
pub fn prediction_metrics(y: &[f64], yhat: &[f64]) -> Result<Metrics, MetricsError> {
    if y.len() != yhat.len() {
        return Err(MetricsError::LengthMismatch(y.len(), yhat.len()));
    }
    let n = y.len();
    if n < 2 {
        return Err(MetricsError::TooFew(n));
    }
    let nf = n as f64;
    let mut ss_res = 0.0;
    let mut abs_sum = 0.0;
    for (a, b) in y.iter().zip(yhat) {
        let r = a - b;
        ss_res += r * r;
        abs_sum += r.abs();
    }
    let rmse = (ss_res / nf).sqrt();
    let mae = abs_sum / nf;
    let mean = y.iter().sum::<f64>() / nf;
    let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if ss_tot == 0.0 {
        return Err(MetricsError::R2Undefined { rmse, mae });
    }
    Ok(Metrics {
        rmse,
        mae,
        r2: 1.0 - ss_res / ss_tot,
    })
}
