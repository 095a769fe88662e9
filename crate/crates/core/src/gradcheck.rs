//! Central finite differences, used as the oracle for every analytic gradient.

/// Step used by every finite-difference check in this crate.
pub const FD_STEP: f64 = 1e-5;

/// Central difference `(f(x+h) - f(x-h)) / 2h` of a scalar function at
/// coordinate `index` of `x`.
pub fn central_difference<F>(f: &mut F, x: &[f64], index: usize, h: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    probe[index] = x[index] + h;
    let plus = f(&probe);
    probe[index] = x[index] - h;
    let minus = f(&probe);
    (plus - minus) / (2.0 * h)
}

/// Full numeric gradient of `f` at `x`.
pub fn numeric_gradient<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    (0..x.len()).map(|i| central_difference(&mut f, x, i, h)).collect()
}

/// `|analytic - numeric| / (|numeric| + floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / (numeric.abs() + floor)
}
