//! Synthetic ground truth: analytic SDF scenes, inward-facing camera rigs,
//! sphere-traced reference renders, masks, distorted depth, and dataset I/O.
//!
//! The reference renderer is sphere tracing — a different algorithm from the
//! trainable volume renderer, so the two never share bugs.

pub mod formats;

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cameras::{
    add3, cross3, dot3, mat_vec, norm3, normalize3, pixel_to_ray, scale3, sub3, Intrinsics, Pose,
    Vec3,
};
use crate::rngs::{normal, seeded, Stream};

/// Scene-space bounding sphere radius; rays are clipped against it and the
/// mesh-extraction cube encloses its unit core.
pub const BOUNDING_RADIUS: f64 = 1.5;

pub const SPHERE_TRACE_MAX_STEPS: usize = 100;
pub const SPHERE_TRACE_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneKind {
    Sphere { radius: f64 },
    Box { half_extent: [f64; 3] },
    Torus { major: f64, minor: f64 },
    /// Smooth union of two spheres.
    TwoSpheres { radius_a: f64, center_a: [f64; 3], radius_b: f64, center_b: [f64; 3], smoothing: f64 },
}

impl SceneKind {
    pub fn by_name(name: &str) -> Option<SceneKind> {
        match name {
            "sphere" => Some(SceneKind::Sphere { radius: 0.5 }),
            "box" => Some(SceneKind::Box { half_extent: [0.45, 0.35, 0.4] }),
            "torus" => Some(SceneKind::Torus { major: 0.45, minor: 0.18 }),
            "two_spheres" => Some(SceneKind::TwoSpheres {
                radius_a: 0.4,
                center_a: [-0.25, 0.0, 0.0],
                radius_b: 0.3,
                center_b: [0.35, 0.1, 0.1],
                smoothing: 0.1,
            }),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AnalyticScene {
    pub kind: SceneKind,
    pub bounding_radius: f64,
    /// View-dependent specular highlight for stress tests; off by default so
    /// the scene is Lambertian-photo-consistent across views.
    pub specular: bool,
}

impl AnalyticScene {
    pub fn new(kind: SceneKind) -> Self {
        AnalyticScene {
            kind,
            bounding_radius: BOUNDING_RADIUS,
            specular: false,
        }
    }

    pub fn sdf(&self, p: Vec3) -> f64 {
        match self.kind {
            SceneKind::Sphere { radius } => norm3(p) - radius,
            SceneKind::Box { half_extent } => {
                let q = [
                    p[0].abs() - half_extent[0],
                    p[1].abs() - half_extent[1],
                    p[2].abs() - half_extent[2],
                ];
                let outside = [q[0].max(0.0), q[1].max(0.0), q[2].max(0.0)];
                norm3(outside) + q[0].max(q[1]).max(q[2]).min(0.0)
            }
            SceneKind::Torus { major, minor } => {
                let ring = ((p[0] * p[0] + p[2] * p[2]).sqrt() - major, p[1]);
                (ring.0 * ring.0 + ring.1 * ring.1).sqrt() - minor
            }
            SceneKind::TwoSpheres { radius_a, center_a, radius_b, center_b, smoothing } => {
                let a = norm3(sub3(p, center_a)) - radius_a;
                let b = norm3(sub3(p, center_b)) - radius_b;
                smooth_min(a, b, smoothing)
            }
        }
    }

    /// Analytic gradient (central differences for the smooth union's blend,
    /// exact elsewhere); normalized.
    pub fn normal(&self, p: Vec3) -> Vec3 {
        let h = 1e-6;
        let g = [
            (self.sdf([p[0] + h, p[1], p[2]]) - self.sdf([p[0] - h, p[1], p[2]])) / (2.0 * h),
            (self.sdf([p[0], p[1] + h, p[2]]) - self.sdf([p[0], p[1] - h, p[2]])) / (2.0 * h),
            (self.sdf([p[0], p[1], p[2] + h]) - self.sdf([p[0], p[1], p[2] - h])) / (2.0 * h),
        ];
        let n = norm3(g);
        if n > 0.0 {
            scale3(g, 1.0 / n)
        } else {
            [0.0, 0.0, 1.0]
        }
    }

    /// Two-tone procedural stripes, smooth so the 96-pixel renders do not
    /// alias; locally discriminative along two directions.
    pub fn albedo(&self, p: Vec3) -> [f64; 3] {
        let a = (11.0 * p[1] + 4.0 * p[0]).sin();
        let b = (9.0 * p[0] - 5.0 * p[2]).sin();
        let t = 0.5 * (1.0 + a * b);
        let c1 = [0.92, 0.34, 0.18];
        let c2 = [0.16, 0.48, 0.88];
        [
            c1[0] * t + c2[0] * (1.0 - t),
            c1[1] * t + c2[1] * (1.0 - t),
            c1[2] * t + c2[2] * (1.0 - t),
        ]
    }

    /// Uniform surface samples for scenes with a closed-form sampler
    /// (sphere); other kinds go through mesh sampling in evalx.
    pub fn sample_surface_exact(&self, n: usize, seed: u64) -> Option<Vec<Vec3>> {
        match self.kind {
            SceneKind::Sphere { radius } => {
                let mut rng = seeded(seed, Stream::MeshSampling);
                let mut pts = Vec::with_capacity(n);
                while pts.len() < n {
                    let v = [normal(&mut rng), normal(&mut rng), normal(&mut rng)];
                    let m = norm3(v);
                    if m > 1e-9 {
                        pts.push(scale3(v, radius / m));
                    }
                }
                Some(pts)
            }
            _ => None,
        }
    }
}

fn smooth_min(a: f64, b: f64, k: f64) -> f64 {
    let h = (0.5 + 0.5 * (b - a) / k).clamp(0.0, 1.0);
    b * (1.0 - h) + a * h - k * h * (1.0 - h)
}

pub use crate::cameras::ray_sphere_range;

/// Sphere-trace a single ray; Some(t) is the hit distance. Detection uses
/// the plain march (100 steps, eps = 1e-5); the hit parameter is then
/// Newton-polished along the ray so the stored depth is accurate even when
/// the ray meets the surface at a shallow angle.
pub fn sphere_trace(scene: &AnalyticScene, origin: Vec3, dir: Vec3) -> Option<f64> {
    let (near, far) = ray_sphere_range(origin, dir, scene.bounding_radius)?;
    let mut t = near;
    for _ in 0..SPHERE_TRACE_MAX_STEPS {
        let p = add3(origin, scale3(dir, t));
        let d = scene.sdf(p);
        if d < SPHERE_TRACE_EPS {
            for _ in 0..3 {
                let p = add3(origin, scale3(dir, t));
                let slope = dot3(scene.normal(p), dir);
                if slope.abs() < 0.05 {
                    break;
                }
                t -= scene.sdf(p) / slope;
            }
            return Some(t);
        }
        t += d;
        if t > far {
            return None;
        }
    }
    None
}

const LIGHTS: [Vec3; 2] = [[0.48, 0.6, -0.64], [-0.5, 0.7, 0.5]];
const AMBIENT: f64 = 0.2;
const LIGHT_WEIGHT: f64 = 0.45;
pub const BACKGROUND_GRAY: f64 = 0.5;
/// PFM depth marker for rays that miss the surface.
pub const DEPTH_MISS: f64 = -1.0;

/// Reference render of one view: (rgb, mask, depth as ray distance).
pub fn render_ground_truth(
    scene: &AnalyticScene,
    pose: &Pose,
    k: &Intrinsics,
) -> (Vec<[f64; 3]>, Vec<bool>, Vec<f64>) {
    let npix = k.width * k.height;
    let mut rgb = vec![[BACKGROUND_GRAY; 3]; npix];
    let mut mask = vec![false; npix];
    let mut depth = vec![DEPTH_MISS; npix];
    for row in 0..k.height {
        for col in 0..k.width {
            let ray = pixel_to_ray(row, col, k, pose);
            if let Some(t) = sphere_trace(scene, ray.origin, ray.dir) {
                let p = add3(ray.origin, scale3(ray.dir, t));
                let n = scene.normal(p);
                let alb = scene.albedo(p);
                let mut shade = AMBIENT;
                for l in LIGHTS {
                    let ln = normalize3(l);
                    shade += LIGHT_WEIGHT * dot3(n, ln).max(0.0);
                }
                let mut px = [
                    (alb[0] * shade).clamp(0.0, 1.0),
                    (alb[1] * shade).clamp(0.0, 1.0),
                    (alb[2] * shade).clamp(0.0, 1.0),
                ];
                if scene.specular {
                    let view = scale3(ray.dir, -1.0);
                    for l in LIGHTS {
                        let ln = normalize3(l);
                        let r = sub3(scale3(n, 2.0 * dot3(n, ln)), ln);
                        let s = dot3(r, view).max(0.0).powi(32) * 0.5;
                        for c in &mut px {
                            *c = (*c + s).clamp(0.0, 1.0);
                        }
                    }
                }
                let i = row * k.width + col;
                rgb[i] = px;
                mask[i] = true;
                depth[i] = t;
            }
        }
    }
    (rgb, mask, depth)
}

/// The distortion the trainer must undo: depth -> (depth - beta)/alpha, so
/// alpha * distorted + beta reproduces the true depth exactly. Miss pixels
/// keep the miss marker.
pub fn distort_depth(depth: &[f64], alpha: f64, beta: f64) -> Vec<f64> {
    depth
        .iter()
        .map(|&d| if d == DEPTH_MISS { DEPTH_MISS } else { (d - beta) / alpha })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RigConfig {
    pub n_views: usize,
    pub camera_radius: f64,
    /// Elevation range in radians (from the equator of the rig sphere).
    pub elevation_range: (f64, f64),
    /// Maximum azimuth jitter as a fraction of the uniform spacing.
    pub azimuth_jitter: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        RigConfig {
            n_views: 8,
            camera_radius: 3.0,
            elevation_range: (-0.5, 0.6),
            azimuth_jitter: 0.25,
        }
    }
}

/// Inward-facing ring of cameras; every optical axis passes through the
/// origin. World->camera convention.
pub fn generate_rig(cfg: &RigConfig, seed: u64) -> Result<Vec<Pose>, String> {
    if cfg.n_views < 2 {
        return Err(format!("need at least 2 views, got {}", cfg.n_views));
    }
    let mut rng = seeded(seed, Stream::RigGeneration);
    let mut poses = Vec::with_capacity(cfg.n_views);
    let spacing = 2.0 * std::f64::consts::PI / cfg.n_views as f64;
    for i in 0..cfg.n_views {
        let az = i as f64 * spacing + rng.gen_range(-1.0..1.0) * cfg.azimuth_jitter * spacing;
        let el = rng.gen_range(cfg.elevation_range.0..cfg.elevation_range.1);
        let c = [
            cfg.camera_radius * el.cos() * az.cos(),
            cfg.camera_radius * el.sin(),
            cfg.camera_radius * el.cos() * az.sin(),
        ];
        poses.push(look_at(c, [0.0, 0.0, 0.0], [0.0, 1.0, 0.0]));
    }
    Ok(poses)
}

/// World->camera pose of a camera at `eye` looking at `target`.
pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Pose {
    let fwd = normalize3(sub3(target, eye)); // camera +z
    let right = normalize3(cross3(fwd, up)); // camera +x
    let down = cross3(fwd, right); // camera +y (rows grow downward)
    let r = [right, down, fwd];
    Pose {
        r,
        t: scale3(mat_vec(&r, eye), -1.0),
    }
}

/// Bounded random pose noise: rotation by a uniform angle <= max_angle about
/// a random axis, translation uniform in the max_shift ball.
pub fn perturb_poses(poses: &[Pose], max_angle: f64, max_shift: f64, seed: u64) -> Vec<Pose> {
    let mut rng = seeded(seed, Stream::PosePerturbation);
    poses
        .iter()
        .map(|p| {
            let axis = normalize3([normal(&mut rng), normal(&mut rng), normal(&mut rng)]);
            let angle = rng.gen_range(0.0..max_angle);
            let dt = loop {
                let v = [
                    rng.gen_range(-1.0..1.0f64),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ];
                if norm3(v) <= 1.0 {
                    break scale3(v, max_shift);
                }
            };
            let delta = Pose::from_axis_angle(scale3(axis, angle), dt);
            delta.compose(p)
        })
        .collect()
}

#[derive(Debug, thiserror::Error)]
pub enum SceneIoError {
    #[error("{file}: {detail}")]
    Format { file: String, detail: String },
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{file}: {detail}")]
    Json { file: String, detail: String },
    #[error("dataset invariant violated: {0}")]
    Invariant(String),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneMeta {
    pub views: usize,
    pub width: usize,
    pub height: usize,
    pub bounding_radius: f64,
    pub seed: u64,
    pub scene: AnalyticScene,
    pub rig: RigConfig,
}

#[derive(Clone, Debug)]
pub struct SceneView {
    /// Row-major RGB in [0,1].
    pub image: Vec<[f64; 3]>,
    pub mask: Vec<bool>,
    /// Distorted (monocular-style) depth as ray distance; DEPTH_MISS outside.
    pub depth: Vec<f64>,
    pub pose_gt: Pose,
}

#[derive(Clone, Debug)]
pub struct SceneDataset {
    pub meta: SceneMeta,
    pub intrinsics: Intrinsics,
    pub views: Vec<SceneView>,
    /// Per-view ground-truth (alpha, beta) used by distort_depth; test-only.
    pub distortion_gt: Vec<(f64, f64)>,
}

impl SceneDataset {
    /// Generate the full synthetic dataset for a scene + rig.
    pub fn generate(
        scene: AnalyticScene,
        rig: RigConfig,
        intrinsics: Intrinsics,
        seed: u64,
    ) -> Result<SceneDataset, String> {
        let poses = generate_rig(&rig, seed)?;
        let mut drng = seeded(seed, Stream::DepthDistortion);
        let mut views = Vec::with_capacity(rig.n_views);
        let mut distortion_gt = Vec::with_capacity(rig.n_views);
        for pose in &poses {
            let (image, mask, depth) = render_ground_truth(&scene, pose, &intrinsics);
            let alpha = drng.gen_range(0.8..1.2);
            let beta = drng.gen_range(-0.1..0.1);
            let depth = distort_depth(&depth, alpha, beta);
            distortion_gt.push((alpha, beta));
            views.push(SceneView {
                image,
                mask,
                depth,
                pose_gt: *pose,
            });
        }
        Ok(SceneDataset {
            meta: SceneMeta {
                views: rig.n_views,
                width: intrinsics.width,
                height: intrinsics.height,
                bounding_radius: scene.bounding_radius,
                seed,
                scene,
                rig,
            },
            intrinsics,
            views,
            distortion_gt,
        })
    }

    pub fn gt_poses(&self) -> Vec<Pose> {
        self.views.iter().map(|v| v.pose_gt).collect()
    }

    pub fn validate(&self) -> Result<(), SceneIoError> {
        let npix = self.meta.width * self.meta.height;
        if self.views.len() != self.meta.views {
            return Err(SceneIoError::Invariant(format!(
                "meta says {} views, found {}",
                self.meta.views,
                self.views.len()
            )));
        }
        for (i, v) in self.views.iter().enumerate() {
            if v.image.len() != npix || v.mask.len() != npix || v.depth.len() != npix {
                return Err(SceneIoError::Invariant(format!(
                    "view {i}: resolution mismatch (expected {}x{})",
                    self.meta.width, self.meta.height
                )));
            }
            for (j, (&m, &d)) in v.mask.iter().zip(v.depth.iter()).enumerate() {
                if m && !(d.is_finite() && d > 0.0) {
                    return Err(SceneIoError::Invariant(format!(
                        "view {i}: mask pixel {j} has no finite positive depth (got {d})"
                    )));
                }
            }
            if v.pose_gt.orthogonality_error() > 1e-8 {
                return Err(SceneIoError::Invariant(format!("view {i}: pose rotation not orthonormal")));
            }
        }
        if self.distortion_gt.len() != self.views.len() {
            return Err(SceneIoError::Invariant("distortion entries != view count".into()));
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<(), SceneIoError> {
        std::fs::create_dir_all(dir)?;
        let (w, h) = (self.meta.width, self.meta.height);
        for (i, v) in self.views.iter().enumerate() {
            formats::write_ppm(&dir.join(format!("view_{i:03}.ppm")), w, h, &v.image)?;
            formats::write_pgm(&dir.join(format!("mask_{i:03}.pgm")), w, h, &v.mask)?;
            formats::write_pfm(&dir.join(format!("depth_{i:03}.pfm")), w, h, &v.depth)?;
        }
        write_json(&dir.join("intrinsics.json"), &self.intrinsics)?;
        let poses: Vec<PoseRecord> = self
            .views
            .iter()
            .enumerate()
            .map(|(i, v)| PoseRecord::from_pose(i, &v.pose_gt))
            .collect();
        write_json(&dir.join("poses_gt.json"), &poses)?;
        let dist: Vec<DistortionRecord> = self
            .distortion_gt
            .iter()
            .enumerate()
            .map(|(view, &(alpha, beta))| DistortionRecord { view, alpha, beta })
            .collect();
        write_json(&dir.join("distortion_gt.json"), &dist)?;
        write_json(&dir.join("meta.json"), &self.meta)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<SceneDataset, SceneIoError> {
        let meta: SceneMeta = read_json(&dir.join("meta.json"))?;
        let intrinsics: Intrinsics = read_json(&dir.join("intrinsics.json"))?;
        intrinsics
            .validate()
            .map_err(|e| SceneIoError::Invariant(format!("intrinsics.json: {e}")))?;
        let poses: Vec<PoseRecord> = read_json(&dir.join("poses_gt.json"))?;
        let dist: Vec<DistortionRecord> = read_json(&dir.join("distortion_gt.json"))?;
        let mut views = Vec::with_capacity(meta.views);
        for i in 0..meta.views {
            let (wi, hi, image) = formats::read_ppm(&dir.join(format!("view_{i:03}.ppm")))?;
            let (wm, hm, mask) = formats::read_pgm(&dir.join(format!("mask_{i:03}.pgm")))?;
            let (wd, hd, depth) = formats::read_pfm(&dir.join(format!("depth_{i:03}.pfm")))?;
            if (wi, hi) != (meta.width, meta.height)
                || (wm, hm) != (meta.width, meta.height)
                || (wd, hd) != (meta.width, meta.height)
            {
                return Err(SceneIoError::Invariant(format!(
                    "view {i}: resolution mismatch across files (image {wi}x{hi}, mask {wm}x{hm}, depth {wd}x{hd}, meta {}x{})",
                    meta.width, meta.height
                )));
            }
            let rec = poses
                .iter()
                .find(|p| p.view == i)
                .ok_or_else(|| SceneIoError::Invariant(format!("poses_gt.json missing view {i}")))?;
            views.push(SceneView {
                image,
                mask,
                depth,
                pose_gt: rec.to_pose(),
            });
        }
        let mut distortion_gt = Vec::with_capacity(meta.views);
        for i in 0..meta.views {
            let rec = dist
                .iter()
                .find(|d| d.view == i)
                .ok_or_else(|| SceneIoError::Invariant(format!("distortion_gt.json missing view {i}")))?;
            distortion_gt.push((rec.alpha, rec.beta));
        }
        let ds = SceneDataset {
            meta,
            intrinsics,
            views,
            distortion_gt,
        };
        ds.validate()?;
        Ok(ds)
    }
}

/// Pose file record: row-major rotation, translation (world->camera).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PoseRecord {
    pub view: usize,
    pub r: [f64; 9],
    pub t: [f64; 3],
}

impl PoseRecord {
    pub fn from_pose(view: usize, p: &Pose) -> Self {
        let mut r = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                r[i * 3 + j] = p.r[i][j];
            }
        }
        PoseRecord { view, r, t: p.t }
    }

    pub fn to_pose(&self) -> Pose {
        let mut r = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] = self.r[i * 3 + j];
            }
        }
        Pose { r, t: self.t }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistortionRecord {
    pub view: usize,
    pub alpha: f64,
    pub beta: f64,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), SceneIoError> {
    let s = serde_json::to_string_pretty(value).map_err(|e| SceneIoError::Json {
        file: path.display().to_string(),
        detail: e.to_string(),
    })?;
    std::fs::write(path, s + "\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, SceneIoError> {
    let s = std::fs::read_to_string(path).map_err(|e| SceneIoError::Json {
        file: path.display().to_string(),
        detail: format!("read: {e}"),
    })?;
    serde_json::from_str(&s).map_err(|e| SceneIoError::Json {
        file: path.display().to_string(),
        detail: e.to_string(),
    })
}

/// Default desk-scale intrinsics: the radius-0.5 sphere at camera distance 3
/// projects to a ~80 px disk in a 96 px frame. Filling the frame keeps the
/// fraction of feature cells whose receptive field straddles the silhouette
/// small, which the multi-view consistency loss depends on.
pub fn default_intrinsics(res: usize) -> Intrinsics {
    let f = 240.0 * res as f64 / 96.0;
    Intrinsics {
        fx: f,
        fy: f,
        cx: res as f64 / 2.0,
        cy: res as f64 / 2.0,
        width: res,
        height: res,
    }
}
