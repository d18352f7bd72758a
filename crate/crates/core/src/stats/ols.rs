use super::{prediction_metrics, student_t_two_sided_p, DesignMatrix, MetricsError, StatsError};
use crate::domain::{AssessmentResult, Metrics};

/// A column is aliased when the norm left after projecting out the earlier
/// accepted columns falls below this fraction of its original norm.
pub const ALIAS_TOLERANCE: f64 = 1e-10;

struct Qr {
    /// Householder vectors, one per accepted column, acting on rows `r..n`.
    reflectors: Vec<Vec<f64>>,
    /// Upper-triangular R over accepted columns, row-major `rank x rank`.
    r: Vec<Vec<f64>>,
    /// Original column index of each accepted column, in pivot order.
    accepted: Vec<usize>,
}

fn apply_reflector(v: &[f64], offset: usize, x: &mut [f64]) {
    let mut dot = 0.0;
    for (vi, xi) in v.iter().zip(&x[offset..]) {
        dot += vi * xi;
    }
    let scale = 2.0 * dot;
    for (vi, xi) in v.iter().zip(&mut x[offset..]) {
        *xi -= scale * vi;
    }
}

/// Householder QR that keeps column order but moves columns whose residual
/// norm falls below [`ALIAS_TOLERANCE`] out of the basis.
fn pivoted_qr(x: &DesignMatrix) -> Qr {
    let n = x.rows();
    let mut reflectors: Vec<Vec<f64>> = Vec::new();
    let mut r_cols: Vec<Vec<f64>> = Vec::new();
    let mut accepted = Vec::new();
    for j in 0..x.cols() {
        let mut col = x.column(j).to_vec();
        let original: f64 = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (k, v) in reflectors.iter().enumerate() {
            apply_reflector(v, k, &mut col);
        }
        let rank = reflectors.len();
        if rank >= n {
            continue;
        }
        let tail_norm: f64 = col[rank..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if original == 0.0 || tail_norm <= ALIAS_TOLERANCE * original {
            continue;
        }
        let alpha = if col[rank] >= 0.0 { -tail_norm } else { tail_norm };
        let mut v: Vec<f64> = col[rank..].to_vec();
        v[0] -= alpha;
        let v_norm: f64 = v.iter().map(|e| e * e).sum::<f64>().sqrt();
        for e in &mut v {
            *e /= v_norm;
        }
        let mut r_col: Vec<f64> = col[..rank].to_vec();
        r_col.push(alpha);
        reflectors.push(v);
        r_cols.push(r_col);
        accepted.push(j);
    }
    let rank = accepted.len();
    let mut r = vec![vec![0.0; rank]; rank];
    for (c, col) in r_cols.iter().enumerate() {
        for (row, &val) in col.iter().enumerate() {
            r[row][c] = val;
        }
    }
    Qr {
        reflectors,
        r,
        accepted,
    }
}

/// Solves `R b = rhs` for upper-triangular R.
fn back_substitute(r: &[Vec<f64>], rhs: &[f64]) -> Vec<f64> {
    let m = rhs.len();
    let mut b = vec![0.0; m];
    for i in (0..m).rev() {
        let mut s = rhs[i];
        for k in i + 1..m {
            s -= r[i][k] * b[k];
        }
        b[i] = s / r[i][i];
    }
    b
}

/// Inverse of an upper-triangular matrix.
fn upper_inverse(r: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = r.len();
    let mut inv = vec![vec![0.0; m]; m];
    for c in 0..m {
        let mut e = vec![0.0; m];
        e[c] = 1.0;
        let col = back_substitute(r, &e);
        for (row, v) in col.into_iter().enumerate() {
            inv[row][c] = v;
        }
    }
    inv
}

/// `X b`, summed in column order.
pub fn predict_linear(coefficients: &[f64], x: &DesignMatrix) -> Result<Vec<f64>, StatsError> {
    if coefficients.len() != x.cols() {
        return Err(StatsError::Dimension(format!(
            "{} coefficients for a design with {} columns",
            coefficients.len(),
            x.cols()
        )));
    }
    let mut yhat = vec![0.0; x.rows()];
    for (j, &b) in coefficients.iter().enumerate() {
        if b == 0.0 {
            continue;
        }
        for (acc, v) in yhat.iter_mut().zip(x.column(j)) {
            *acc += b * v;
        }
    }
    Ok(yhat)
}

/// Ordinary least squares with per-coefficient two-sided t-tests.
///
/// Aliased (linearly dependent) columns get coefficient 0, standard error 0
/// and p-value 1. Residual degrees of freedom are `n - rank`. When the
/// residual variance is exactly zero, nonzero coefficients get t = ±f64::MAX
/// (p = 0). When `y` is constant the reported r2 is 0.
pub fn ols_fit(x: &DesignMatrix, y: &[f64]) -> Result<AssessmentResult, StatsError> {
    let n = x.rows();
    if y.len() != n {
        return Err(StatsError::Dimension(format!(
            "design has {n} rows but y has {}",
            y.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite("outcome"));
    }
    if x.columns().iter().flatten().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite("design matrix"));
    }
    let qr = pivoted_qr(x);
    let rank = qr.accepted.len();
    let dof = n as i64 - rank as i64;
    if dof < 1 {
        return Err(StatsError::NoResidualDof { n, rank, dof });
    }

    let mut qty = y.to_vec();
    for (k, v) in qr.reflectors.iter().enumerate() {
        apply_reflector(v, k, &mut qty);
    }
    let reduced = back_substitute(&qr.r, &qty[..rank]);
    let mut coefficients = vec![0.0; x.cols()];
    for (pos, &col) in qr.accepted.iter().enumerate() {
        coefficients[col] = reduced[pos];
    }
    let fitted = predict_linear(&coefficients, x)?;
    let rss: f64 = y.iter().zip(&fitted).map(|(a, b)| (a - b) * (a - b)).sum();
    let sigma2 = rss / dof as f64;

    let r_inv = upper_inverse(&qr.r);
    let mut std_errors = vec![0.0; x.cols()];
    for (pos, &col) in qr.accepted.iter().enumerate() {
        let row_sq: f64 = r_inv[pos].iter().map(|v| v * v).sum();
        std_errors[col] = (sigma2 * row_sq).sqrt();
    }
    let mut aliased_all = vec![true; x.cols()];
    for &col in &qr.accepted {
        aliased_all[col] = false;
    }
    let mut t_values = vec![0.0; x.cols()];
    let mut p_all = vec![1.0; x.cols()];
    for j in 0..x.cols() {
        if aliased_all[j] {
            continue;
        }
        let b = coefficients[j];
        let se = std_errors[j];
        let t = if se > 0.0 {
            b / se
        } else if b == 0.0 {
            0.0
        } else {
            f64::MAX.copysign(b)
        };
        t_values[j] = t;
        p_all[j] = student_t_two_sided_p(t, dof as f64)?;
    }

    let metrics = match prediction_metrics(y, &fitted) {
        Ok(m) => m,
        Err(MetricsError::R2Undefined { rmse, mae }) => Metrics { rmse, mae, r2: 0.0 },
        Err(e) => return Err(e.into()),
    };
    Ok(AssessmentResult {
        coefficients,
        std_errors,
        t_values,
        p_values: p_all[1..].to_vec(),
        aliased: aliased_all[1..].to_vec(),
        fitted,
        metrics,
        dof: dof as usize,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(cols: Vec<Vec<f64>>) -> DesignMatrix {
        let labels = (0..cols.len()).map(|i| format!("x{i}")).collect();
        DesignMatrix::with_intercept(cols, labels).unwrap()
    }

    #[test]
    fn exact_line() {
        let xs = vec![1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = xs.iter().map(|v| 2.0 * v + 1.0).collect();
        let fit = ols_fit(&design(vec![xs]), &y).unwrap();
        assert!((fit.coefficients[0] - 1.0).abs() < 1e-12);
        assert!((fit.coefficients[1] - 2.0).abs() < 1e-12);
        assert!(fit.metrics.rmse < 1e-12);
        assert!((fit.metrics.r2 - 1.0).abs() < 1e-12);
        assert!(fit.p_values[0] < 1e-12);
        assert_eq!(fit.dof, 2);
    }

    #[test]
    fn duplicate_column_is_aliased() {
        let a = vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0];
        let y = vec![1.0, 3.1, 2.9, 1.2, 3.0, 0.8];
        let fit = ols_fit(&design(vec![a.clone(), a]), &y).unwrap();
        assert_eq!(fit.aliased, vec![false, true]);
        assert_eq!(fit.coefficients[2], 0.0);
        assert_eq!(fit.p_values[1], 1.0);
        assert!(fit.p_values[0] < 0.01);
    }

    #[test]
    fn constant_column_is_aliased_with_intercept() {
        let y = vec![1.0, 2.0, 0.5, 3.0, 2.5];
        let fit = ols_fit(&design(vec![vec![1.0; 5], vec![0.0, 1.0, 0.0, 1.0, 1.0]]), &y).unwrap();
        assert_eq!(fit.aliased, vec![true, false]);
        assert_eq!(fit.p_values[0], 1.0);
    }

    #[test]
    fn needs_residual_dof() {
        let err = ols_fit(&design(vec![vec![1.0, 2.0]]), &[1.0, 2.0]).unwrap_err();
        assert!(matches!(err, StatsError::NoResidualDof { .. }));
        assert!(ols_fit(&design(vec![vec![1.0, 2.0, 3.0]]), &[1.0, f64::NAN, 2.0]).is_err());
    }
}
