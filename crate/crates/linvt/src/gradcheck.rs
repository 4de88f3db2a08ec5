//! Central finite differences, used to verify every analytic gradient.
//! The oracle only re-evaluates forward passes, so it stays independent of
//! the backward implementation it checks.

/// Numeric gradient of `f` at `x` via central differences with step `h`.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe);
        probe[i] = orig - h;
        let fm = f(&probe);
        probe[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Step size used throughout the gradient checks.
pub const FD_STEP: f64 = 1e-5;

/// Max relative error between analytic and numeric gradients. The floor in
/// the denominator turns the comparison absolute for gradients below 1e-4,
/// where central differences bottom out at roundoff (~1e-10 for losses of
/// order ten); meaningful gradients are compared relatively.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-4))
        .fold(0.0, f64::max)
}
