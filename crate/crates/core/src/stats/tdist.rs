use super::StatsError;
use statrs::function::beta::beta_reg;

/// Two-sided p-value of a t statistic: `2 * (1 - CDF_t(|t|, dof))`.
///
/// Evaluated as `I_x(dof/2, 1/2)` with `x = dof / (dof + t^2)`, which is the
/// two-sided tail mass directly and avoids cancellation for large |t|.
pub fn student_t_two_sided_p(t_stat: f64, dof: f64) -> Result<f64, StatsError> {
    if !dof.is_finite() || dof < 1.0 {
        return Err(StatsError::BadDof(dof));
    }
    if t_stat.is_nan() {
        return Err(StatsError::NonFinite("t statistic"));
    }
    if t_stat == 0.0 {
        return Ok(1.0);
    }
    if t_stat.is_infinite() {
        return Ok(0.0);
    }
    let x = dof / (dof + t_stat * t_stat);
    if x <= 0.0 {
        return Ok(0.0);
    }
    Ok(beta_reg(dof / 2.0, 0.5, x).clamp(0.0, 1.0))
}
