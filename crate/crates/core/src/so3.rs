//! Axis-angle ↔ rotation-matrix maps with stable small-angle branches.
//!
//! Shared by the plain camera algebra (f64) and the differentiable graph op.
//! Matrices are row-major `[[T; 3]; 3]`.

use crate::num::Real;

/// Angle below which the sin/cos coefficients switch to their 2nd-order
/// Taylor series; keeps the map and its derivative stable at r = 0.
pub fn series_threshold<T: Real>() -> T {
    T::from_f64(1e-6)
}

#[inline]
fn coeffs<T: Real>(theta: T) -> (T, T) {
    // a = sin(t)/t, b = (1-cos(t))/t^2
    if theta < series_threshold::<T>() {
        let t2 = theta * theta;
        (
            T::ONE - t2 / T::from_f64(6.0),
            T::from_f64(0.5) - t2 / T::from_f64(24.0),
        )
    } else {
        (
            theta.sin() / theta,
            (T::ONE - theta.cos()) / (theta * theta),
        )
    }
}

#[inline]
fn coeff_derivs<T: Real>(theta: T) -> (T, T) {
    // da/dt, db/dt
    if theta < series_threshold::<T>() {
        (-theta / T::from_f64(3.0), -theta / T::from_f64(12.0))
    } else {
        let (s, c) = (theta.sin(), theta.cos());
        let t2 = theta * theta;
        (
            (theta * c - s) / t2,
            (theta * s - T::from_f64(2.0) * (T::ONE - c)) / (t2 * theta),
        )
    }
}

#[inline]
fn hat<T: Real>(r: [T; 3]) -> [[T; 3]; 3] {
    let z = T::ZERO;
    [
        [z, -r[2], r[1]],
        [r[2], z, -r[0]],
        [-r[1], r[0], z],
    ]
}

fn mat_mul<T: Real>(a: &[[T; 3]; 3], b: &[[T; 3]; 3]) -> [[T; 3]; 3] {
    let mut c = [[T::ZERO; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut s = T::ZERO;
            for k in 0..3 {
                s += a[i][k] * b[k][j];
            }
            c[i][j] = s;
        }
    }
    c
}

/// Rodrigues map: R = I + a·[r]× + b·[r]×² with a = sinθ/θ, b = (1−cosθ)/θ².
pub fn rodrigues<T: Real>(r: [T; 3]) -> [[T; 3]; 3] {
    let theta = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
    let (a, b) = coeffs(theta);
    let k = hat(r);
    let k2 = mat_mul(&k, &k);
    let mut out = [[T::ZERO; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let id = if i == j { T::ONE } else { T::ZERO };
            out[i][j] = id + a * k[i][j] + b * k2[i][j];
        }
    }
    out
}

/// ∂R/∂r_i for i = 0, 1, 2.
///
/// With K = [r]×, E_i = [e_i]×: dR/dr_i = a'·(r_i/θ)·K + a·E_i
/// + b'·(r_i/θ)·K² + b·(E_i K + K E_i); the θ→0 limit is E_i.
pub fn rodrigues_jacobian<T: Real>(r: [T; 3]) -> [[[T; 3]; 3]; 3] {
    let theta = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
    let (a, b) = coeffs(theta);
    let (da, db) = coeff_derivs(theta);
    let k = hat(r);
    let k2 = mat_mul(&k, &k);
    let mut jac = [[[T::ZERO; 3]; 3]; 3];
    for axis in 0..3 {
        let mut e = [T::ZERO; 3];
        e[axis] = T::ONE;
        let ei = hat(e);
        let eik = mat_mul(&ei, &k);
        let kei = mat_mul(&k, &ei);
        // dθ/dr_axis = r_axis/θ (0 in the limit; the a'·K and b'·K² terms
        // vanish with K anyway)
        let dtheta = if theta < series_threshold::<T>() {
            T::ZERO
        } else {
            r[axis] / theta
        };
        for i in 0..3 {
            for j in 0..3 {
                jac[axis][i][j] = da * dtheta * k[i][j]
                    + a * ei[i][j]
                    + db * dtheta * k2[i][j]
                    + b * (eik[i][j] + kei[i][j]);
            }
        }
    }
    jac
}

/// Matrix log on SO(3) for θ < π.
pub fn log_so3<T: Real>(m: &[[T; 3]; 3]) -> [T; 3] {
    let tr = m[0][0] + m[1][1] + m[2][2];
    let cos_theta = ((tr - T::ONE) * T::from_f64(0.5))
        .max(-T::ONE)
        .min(T::ONE);
    // acos via atan2-free route: θ = atan2(‖axis‖, cosθ) is more stable, but
    // bounded inputs make the clamped acos adequate here.
    let theta = T::from_f64(cos_theta.to_f64().acos());
    let v = [
        m[2][1] - m[1][2],
        m[0][2] - m[2][0],
        m[1][0] - m[0][1],
    ];
    if theta < series_threshold::<T>() {
        // r ≈ v/2 (1 + θ²/6)
        let c = T::from_f64(0.5) * (T::ONE + theta * theta / T::from_f64(6.0));
        return [v[0] * c, v[1] * c, v[2] * c];
    }
    let c = theta / (T::from_f64(2.0) * theta.sin());
    [v[0] * c, v[1] * c, v[2] * c]
}

/// Rotation angle (radians) of a matrix in SO(3).
pub fn rotation_angle<T: Real>(m: &[[T; 3]; 3]) -> T {
    // atan2(‖skew‖, tr−1) form: exact zero for the identity, stable near 0.
    let v = [
        m[2][1] - m[1][2],
        m[0][2] - m[2][0],
        m[1][0] - m[0][1],
    ];
    let s = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let c = m[0][0] + m[1][1] + m[2][2] - T::ONE;
    T::from_f64(s.to_f64().atan2(c.to_f64()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_at_zero() {
        let r = rodrigues([0.0f64; 3]);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(r[i][j], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn quarter_turn_about_z() {
        let r = rodrigues([0.0, 0.0, std::f64::consts::FRAC_PI_2]);
        // maps (1,0,0) to (0,1,0)
        let v = [r[0][0], r[1][0], r[2][0]];
        assert!((v[0] - 0.0).abs() < 1e-12);
        assert!((v[1] - 1.0).abs() < 1e-12);
        assert!((v[2] - 0.0).abs() < 1e-12);
    }

    #[test]
    fn pinned_entry() {
        // Oracle: Rodrigues formula evaluated in double precision.
        let r = rodrigues([0.1, 0.2, 0.3]);
        assert!((r[0][0] - 0.9357548).abs() < 1e-6, "got {}", r[0][0]);
    }

    #[test]
    fn log_inverts_exp() {
        let cases = [
            [0.3, -0.2, 0.9],
            [1e-8, 2e-8, -1e-8],
            [2.5, 0.0, 0.0],
            [0.0, 0.0, 0.0],
        ];
        for r in cases {
            let m = rodrigues(r);
            let back = log_so3(&m);
            for i in 0..3 {
                assert!(
                    (back[i] - r[i]).abs() < 1e-8,
                    "case {r:?}: got {back:?}"
                );
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        // Both the series branch (θ ≈ 0) and the general branch (θ ≈ 1).
        let cases = [[1e-9, -2e-9, 1e-9], [0.5, -0.6, 0.55], [0.1, 0.2, 0.3]];
        let eps = 1e-6;
        for r in cases {
            let jac = rodrigues_jacobian(r);
            for axis in 0..3 {
                let mut rp = r;
                rp[axis] += eps;
                let mut rm = r;
                rm[axis] -= eps;
                let mp = rodrigues(rp);
                let mm = rodrigues(rm);
                for i in 0..3 {
                    for j in 0..3 {
                        let fd = (mp[i][j] - mm[i][j]) / (2.0 * eps);
                        let an = jac[axis][i][j];
                        let denom = fd.abs().max(an.abs()).max(1e-3);
                        assert!(
                            ((fd - an) / denom).abs() < 1e-5,
                            "axis {axis} entry ({i},{j}): fd {fd} vs {an} at {r:?}"
                        );
                    }
                }
            }
        }
    }
}
