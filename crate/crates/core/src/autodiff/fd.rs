//! Central finite-difference oracles.
//!
//! These deliberately know nothing about the tape: they re-evaluate a closure
//! at perturbed inputs, which keeps them independent of the reverse-mode
//! implementation they are used to check.

/// Default perturbation used by the gradient-integrity suite.
pub const FD_EPS: f64 = 1e-3;
/// Default relative-error bound.
pub const FD_REL_TOL: f64 = 1e-4;

/// Central finite difference of a scalar function along coordinate `i`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, eps: f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] += eps;
    let mut xm = x.to_vec();
    xm[i] -= eps;
    (f(&xp) - f(&xm)) / (2.0 * eps)
}

/// Relative error with an absolute floor so near-zero pairs compare sanely.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Check an analytic gradient against central differences on the listed
/// coordinates. Returns the first offending coordinate as an error string.
pub fn check_gradient(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    coords: &[usize],
    eps: f64,
    rel_tol: f64,
) -> Result<(), String> {
    assert_eq!(x.len(), analytic.len());
    for &i in coords {
        let fd = central_diff(f, x, i, eps);
        let an = analytic[i];
        let err = rel_err(fd, an, 1e-6);
        if err > rel_tol || !fd.is_finite() || !an.is_finite() {
            return Err(format!(
                "coordinate {i}: analytic {an:.9e} vs central-difference {fd:.9e} (rel err {err:.3e})"
            ));
        }
    }
    Ok(())
}
