use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

/// Compares an analytic gradient against central finite differences.
///
/// `f` returns the function value and its analytic gradient at a point.
/// The result is `max_i |analytic_i - numeric_i| / max(1, |analytic_i|)`.
pub fn grad_check<F>(f: F, point: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<(f64, Tensor)>,
{
    if !(step > 0.0) {
        return Err(Error::Contract(format!("finite-difference step must be > 0, got {step}")));
    }
    let (value, analytic) = f(point)?;
    if !value.is_finite() || !analytic.is_finite() {
        return Err(Error::Numeric("non-finite value or gradient at the check point".into()));
    }
    if analytic.len() != point.len() {
        return Err(Error::dim("analytic gradient", point.len(), analytic.len()));
    }
    let mut worst: f64 = 0.0;
    let mut probe = point.clone();
    for i in 0..point.len() {
        let orig = point.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = f(&probe)?.0;
        probe.data_mut()[i] = orig - step;
        let minus = f(&probe)?.0;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite value while perturbing coordinate {i}"
            )));
        }
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}
