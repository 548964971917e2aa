//! Rigid-transform algebra, ray generation, and point projection.
//!
//! World→camera convention throughout: x_cam = R·x_world + t. Camera centers
//! are derived (−Rᵀt), never stored. Pixel centers sit at half-integer
//! coordinates; this must match the scene renderer exactly.

use serde::{Deserialize, Serialize};

use crate::so3;

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

pub fn add3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale3(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross3(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm3(a: Vec3) -> f64 {
    dot3(a, a).sqrt()
}

pub fn normalize3(a: Vec3) -> Vec3 {
    let n = norm3(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

pub fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn mat_t_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

pub fn mat_transpose(a: &Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[j][i];
        }
    }
    c
}

pub fn identity3() -> Mat3 {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

/// Axis-angle exponential map (Rodrigues).
pub fn rodrigues(r: Vec3) -> Mat3 {
    so3::rodrigues(r)
}

/// World→camera rigid transform.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Pose {
    /// Rotation, world→camera (row-major).
    pub r: Mat3,
    /// Translation, world→camera.
    pub t: Vec3,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            r: identity3(),
            t: [0.0; 3],
        }
    }

    pub fn from_axis_angle(r: Vec3, t: Vec3) -> Self {
        Pose { r: rodrigues(r), t }
    }

    /// Camera center in world coordinates: −Rᵀt.
    pub fn center(&self) -> Vec3 {
        scale3(mat_t_vec(&self.r, self.t), -1.0)
    }

    pub fn transform(&self, x: Vec3) -> Vec3 {
        add3(mat_vec(&self.r, x), self.t)
    }

    pub fn inverse(&self) -> Pose {
        let rt = mat_transpose(&self.r);
        Pose {
            r: rt,
            t: scale3(mat_vec(&rt, self.t), -1.0),
        }
    }

    /// Composition as transforms: (a ∘ b)(x) = a(b(x)).
    pub fn compose(&self, b: &Pose) -> Pose {
        Pose {
            r: mat_mul(&self.r, &b.r),
            t: add3(mat_vec(&self.r, b.t), self.t),
        }
    }

    /// Largest deviation of RᵀR from the identity plus |det−1|.
    pub fn orthogonality_error(&self) -> f64 {
        let rt_r = mat_mul(&mat_transpose(&self.r), &self.r);
        let mut e: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let id = if i == j { 1.0 } else { 0.0 };
                e = e.max((rt_r[i][j] - id).abs());
            }
        }
        let det = self.r[0][0] * (self.r[1][1] * self.r[2][2] - self.r[1][2] * self.r[2][1])
            - self.r[0][1] * (self.r[1][0] * self.r[2][2] - self.r[1][2] * self.r[2][0])
            + self.r[0][2] * (self.r[1][0] * self.r[2][1] - self.r[1][1] * self.r[2][0]);
        e.max((det - 1.0).abs())
    }
}

/// Transform between camera frames: a ∘ b⁻¹.
pub fn relative_pose(a: &Pose, b: &Pose) -> Pose {
    a.compose(&b.inverse())
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(format!("focal lengths must be positive: fx={} fy={}", self.fx, self.fy));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(format!("principal point cx={} outside [0, {})", self.cx, self.width));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(format!("principal point cy={} outside [0, {})", self.cy, self.height));
        }
        Ok(())
    }
}

/// A per-pixel ray in world coordinates; direction is unit-norm.
#[derive(Clone, Copy, Debug)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
    /// (row, col) of the source pixel.
    pub pixel: (usize, usize),
    pub view: usize,
}

/// Camera-frame direction of a pixel (before rotation into the world), using
/// half-integer pixel centers. Not normalized.
pub fn pixel_camera_dir(row: usize, col: usize, k: &Intrinsics) -> Vec3 {
    [
        (col as f64 + 0.5 - k.cx) / k.fx,
        (row as f64 + 0.5 - k.cy) / k.fy,
        1.0,
    ]
}

/// Ray through a pixel center: o = −Rᵀt, v = normalize(Rᵀ·K⁻¹·(col+.5, row+.5, 1)).
pub fn pixel_to_ray(row: usize, col: usize, k: &Intrinsics, pose: &Pose) -> Ray {
    let d_cam = pixel_camera_dir(row, col, k);
    let dir = normalize3(mat_t_vec(&pose.r, d_cam));
    Ray {
        origin: pose.center(),
        dir,
        pixel: (row, col),
        view: 0,
    }
}

/// Perspective projection of a world point. Returns the continuous pixel
/// (x = col-like, y = row-like, in the same half-integer-center convention
/// as `pixel_to_ray`) and the camera-frame depth (z after transform).
/// Points at or behind the camera plane are flagged so callers can skip them.
pub fn project(x: Vec3, k: &Intrinsics, pose: &Pose) -> Result<([f64; 2], f64), BehindCamera> {
    let xc = pose.transform(x);
    if xc[2] <= 1e-12 {
        return Err(BehindCamera);
    }
    let px = k.fx * xc[0] / xc[2] + k.cx;
    let py = k.fy * xc[1] / xc[2] + k.cy;
    Ok(([px, py], xc[2]))
}

/// Entry/exit distances of a ray against a sphere centered at the origin
/// (None = miss). Directions must be unit-norm.
pub fn ray_sphere_range(origin: Vec3, dir: Vec3, radius: f64) -> Option<(f64, f64)> {
    let b = dot3(origin, dir);
    let c = dot3(origin, origin) - radius * radius;
    let disc = b * b - c;
    if disc <= 0.0 {
        return None;
    }
    let s = disc.sqrt();
    let (t0, t1) = (-b - s, -b + s);
    if t1 <= 0.0 {
        return None;
    }
    Some((t0.max(0.0), t1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BehindCamera;

impl std::fmt::Display for BehindCamera {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "point projects at or behind the camera plane")
    }
}

impl std::error::Error for BehindCamera {}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_pose(rng: &mut StdRng) -> Pose {
        let r = [
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
        ];
        let t = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        Pose::from_axis_angle(r, t)
    }

    fn test_intrinsics() -> Intrinsics {
        Intrinsics {
            fx: 120.0,
            fy: 130.0,
            cx: 48.0,
            cy: 47.0,
            width: 96,
            height: 96,
        }
    }

    #[test]
    fn rotation_invariants() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..50 {
            let p = random_pose(&mut rng);
            assert!(p.orthogonality_error() < 1e-10);
        }
    }

    #[test]
    fn principal_point_ray_is_optical_axis() {
        // identity pose, pixel whose center is the principal point
        let k = Intrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 32.5,
            cy: 24.5,
            width: 64,
            height: 48,
        };
        let ray = pixel_to_ray(24, 32, &k, &Pose::identity());
        assert!((ray.dir[0]).abs() < 1e-14);
        assert!((ray.dir[1]).abs() < 1e-14);
        assert!((ray.dir[2] - 1.0).abs() < 1e-14);
        assert_eq!(ray.origin, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn rays_are_unit_norm() {
        let mut rng = StdRng::seed_from_u64(5);
        let k = test_intrinsics();
        for _ in 0..100 {
            let pose = random_pose(&mut rng);
            let ray = pixel_to_ray(rng.gen_range(0..96), rng.gen_range(0..96), &k, &pose);
            assert!((norm3(ray.dir) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn project_roundtrips_pixel_to_ray() {
        let mut rng = StdRng::seed_from_u64(11);
        let k = test_intrinsics();
        for _ in 0..100 {
            let pose = random_pose(&mut rng);
            let (row, col) = (rng.gen_range(0..96), rng.gen_range(0..96));
            let d = rng.gen_range(0.5..10.0);
            let ray = pixel_to_ray(row, col, &k, &pose);
            let x = add3(ray.origin, scale3(ray.dir, d));
            let ([px, py], _depth) = project(x, &k, &pose).unwrap();
            assert!((px - (col as f64 + 0.5)).abs() < 1e-8, "px {px} col {col}");
            assert!((py - (row as f64 + 0.5)).abs() < 1e-8, "py {py} row {row}");
        }
    }

    #[test]
    fn projection_depth_matches_camera_frame_z() {
        let k = test_intrinsics();
        let pose = Pose::identity();
        let (_, depth) = project([0.3, -0.2, 2.5], &k, &pose).unwrap();
        assert!((depth - 2.5).abs() < 1e-14);
    }

    #[test]
    fn point_at_camera_center_is_behind() {
        let mut rng = StdRng::seed_from_u64(13);
        let k = test_intrinsics();
        let pose = random_pose(&mut rng);
        assert_eq!(project(pose.center(), &k, &pose), Err(BehindCamera));
    }

    #[test]
    fn relative_pose_identity_and_gauge_invariance() {
        let mut rng = StdRng::seed_from_u64(17);
        let p = random_pose(&mut rng);
        let rel = relative_pose(&p, &p);
        assert!(rel.orthogonality_error() < 1e-12);
        assert!(so3::rotation_angle(&rel.r) < 1e-12);
        assert!(norm3(rel.t) < 1e-12);

        // applying one global rigid transform to both leaves the result unchanged
        let (a, b, g) = (random_pose(&mut rng), random_pose(&mut rng), random_pose(&mut rng));
        let rel1 = relative_pose(&a, &b);
        let rel2 = relative_pose(&a.compose(&g), &b.compose(&g));
        for i in 0..3 {
            assert!((rel1.t[i] - rel2.t[i]).abs() < 1e-12);
            for j in 0..3 {
                assert!((rel1.r[i][j] - rel2.r[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn relative_pose_matches_homogeneous_matrix_oracle() {
        // Oracle: compose 4x4 homogeneous matrices directly.
        let mut rng = StdRng::seed_from_u64(23);
        for _ in 0..20 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let rel = relative_pose(&a, &b);

            let to4 = |p: &Pose| -> [[f64; 4]; 4] {
                let mut m = [[0.0; 4]; 4];
                for i in 0..3 {
                    for j in 0..3 {
                        m[i][j] = p.r[i][j];
                    }
                    m[i][3] = p.t[i];
                }
                m[3][3] = 1.0;
                m
            };
            let inv4 = |m: &[[f64; 4]; 4]| -> [[f64; 4]; 4] {
                // rigid inverse
                let mut o = [[0.0; 4]; 4];
                for i in 0..3 {
                    for j in 0..3 {
                        o[i][j] = m[j][i];
                    }
                }
                for i in 0..3 {
                    o[i][3] = -(o[i][0] * m[0][3] + o[i][1] * m[1][3] + o[i][2] * m[2][3]);
                }
                o[3][3] = 1.0;
                o
            };
            let mul4 = |a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]| -> [[f64; 4]; 4] {
                let mut c = [[0.0; 4]; 4];
                for i in 0..4 {
                    for j in 0..4 {
                        for k in 0..4 {
                            c[i][j] += a[i][k] * b[k][j];
                        }
                    }
                }
                c
            };
            let want = mul4(&to4(&a), &inv4(&to4(&b)));
            for i in 0..3 {
                assert!((rel.t[i] - want[i][3]).abs() < 1e-10);
                for j in 0..3 {
                    assert!((rel.r[i][j] - want[i][j]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn rodrigues_log_roundtrip_under_pi() {
        let mut rng = StdRng::seed_from_u64(29);
        for _ in 0..100 {
            let axis = normalize3([
                rng.gen_range(-1.0..1.0f64),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ]);
            let theta = rng.gen_range(0.0..3.0);
            let r = scale3(axis, theta);
            let m = rodrigues(r);
            let back = so3::log_so3(&m);
            for i in 0..3 {
                assert!((back[i] - r[i]).abs() < 1e-8);
            }
        }
    }
}
