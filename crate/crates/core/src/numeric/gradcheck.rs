use crate::error::{FddmError, Result};

/// Outcome of a central-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max_i |analytic_i − numeric_i| / max(1, |analytic_i|, |numeric_i|)`
    pub max_rel_error: f64,
    /// Coordinate where the maximum occurred.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compares the analytic gradient returned by `f` at `x` with central
/// differences of step `eps`.
///
/// `f` returns `(value, gradient)`; only the gradient at `x` itself is used.
pub fn grad_check<F>(f: F, x: &[f64], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(FddmError::Parameter(format!(
            "finite-difference step {eps:e} outside [1e-7, 1e-3]"
        )));
    }
    let (value, analytic) = f(x);
    if !value.is_finite() {
        return Err(FddmError::Input(format!("f(x) = {value} is not finite")));
    }
    if analytic.len() != x.len() {
        return Err(FddmError::Shape(format!(
            "gradient has {} entries for {} parameters",
            analytic.len(),
            x.len()
        )));
    }

    let mut probe = x.to_vec();
    let mut numeric = Vec::with_capacity(x.len());
    let mut max_rel_error = 0.0;
    let mut worst_index = 0;
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let (plus, _) = f(&probe);
        probe[i] = x[i] - eps;
        let (minus, _) = f(&probe);
        probe[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(FddmError::Input(format!(
                "f is not finite around coordinate {i}"
            )));
        }
        let num = (plus - minus) / (2.0 * eps);
        let ana = analytic[i];
        let err = (ana - num).abs() / 1f64.max(ana.abs()).max(num.abs());
        if err > max_rel_error || !err.is_finite() {
            max_rel_error = err;
            worst_index = i;
        }
        numeric.push(num);
    }
    Ok(GradCheckReport {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
    })
}
