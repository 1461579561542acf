//! Central finite differences for gradient unit tests.

pub fn numerical_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let plus = f(&probe);
            probe[i] = orig - h;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Largest componentwise relative error, with a floor of 1e-6 on the scale
/// so exactly-zero components compare absolutely.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

pub fn check_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64], h: f64, tol: f64) {
    assert_eq!(x.len(), analytic.len());
    let numeric = numerical_gradient(f, x, h);
    let err = max_relative_error(analytic, &numeric);
    assert!(err < tol, "relative error {err:e} exceeds {tol:e}");
}
