//! Central finite-difference check of analytic parameter gradients.

use super::EncoderParams;
use crate::scalar::Scalar;

/// Largest per-coordinate discrepancy found by [`check_gradients`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(tensor index, entry index)` of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Relative error `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` against `(f(θ + h e_i) − f(θ − h e_i)) / 2h` at every
/// coordinate of `params`.
pub fn check_gradients<T, F>(
    params: &EncoderParams<T>,
    analytic: &EncoderParams<T>,
    h: f64,
    floor: f64,
    mut loss: F,
) -> GradCheckReport
where
    T: Scalar,
    F: FnMut(&EncoderParams<T>) -> f64,
{
    assert!(
        params.same_shape(analytic),
        "gradient shape differs from parameters"
    );
    let mut work = params.clone();
    let analytic = analytic.tensors();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let step = T::lit(h);
    for (t, grad) in analytic.iter().enumerate() {
        for i in 0..grad.len() {
            let orig = work.tensors()[t][i];
            work.tensors_mut()[t][i] = orig + step;
            let up = loss(&work);
            work.tensors_mut()[t][i] = orig - step;
            let down = loss(&work);
            work.tensors_mut()[t][i] = orig;

            let numeric = (up - down) / (2.0 * h);
            let a = grad[i].as_f64();
            let rel = relative_error(a, numeric, floor);
            report.checked += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = rel;
                report.worst = (t, i);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    report
}
