//! Mesh extraction (marching cubes) and metrics: Chamfer distance and
//! relative pose error.

mod mc_tables;

use std::collections::HashMap;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cameras::{norm3, relative_pose, sub3, Pose, Vec3};
use crate::rngs::{seeded, Stream};
use crate::so3;

use mc_tables::{EDGE_TABLE, TRI_TABLE};

#[derive(Clone, Debug, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    /// Per-vertex normal from the SDF gradient.
    pub normals: Vec<Vec3>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Unique undirected edge count.
    pub fn edge_count(&self) -> usize {
        let mut edges = std::collections::HashSet::new();
        for t in &self.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                edges.insert((a.min(b), a.max(b)));
            }
        }
        edges.len()
    }

    /// V - E + F.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_count() as i64 + self.triangles.len() as i64
    }

    /// Every edge shared by exactly two triangles.
    pub fn is_closed(&self) -> bool {
        let mut counts: HashMap<(u32, u32), usize> = HashMap::new();
        for t in &self.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts.values().all(|&c| c == 2)
    }

    pub fn triangle_area(&self, t: &[u32; 3]) -> f64 {
        let a = self.vertices[t[0] as usize];
        let b = self.vertices[t[1] as usize];
        let c = self.vertices[t[2] as usize];
        let ab = sub3(b, a);
        let ac = sub3(c, a);
        let cx = [
            ab[1] * ac[2] - ab[2] * ac[1],
            ab[2] * ac[0] - ab[0] * ac[2],
            ab[0] * ac[1] - ab[1] * ac[0],
        ];
        0.5 * norm3(cx)
    }

    /// Fraction of vertices whose geometric (area-weighted winding) normal
    /// aligns positively with the stored SDF-gradient normal.
    pub fn winding_alignment(&self) -> f64 {
        if self.vertices.is_empty() {
            return 1.0;
        }
        let mut acc = vec![[0.0f64; 3]; self.vertices.len()];
        for t in &self.triangles {
            let a = self.vertices[t[0] as usize];
            let b = self.vertices[t[1] as usize];
            let c = self.vertices[t[2] as usize];
            let ab = sub3(b, a);
            let ac = sub3(c, a);
            let n = [
                ab[1] * ac[2] - ab[2] * ac[1],
                ab[2] * ac[0] - ab[0] * ac[2],
                ab[0] * ac[1] - ab[1] * ac[0],
            ];
            for &vi in t {
                for k in 0..3 {
                    acc[vi as usize][k] += n[k];
                }
            }
        }
        let mut aligned = 0usize;
        for (g, w) in self.normals.iter().zip(acc.iter()) {
            if g[0] * w[0] + g[1] * w[1] + g[2] * w[2] > 0.0 {
                aligned += 1;
            }
        }
        aligned as f64 / self.vertices.len() as f64
    }
}

/// Standard 256-case lookup-table marching cubes with linear edge
/// interpolation and welded vertices. `sdf` and `grad` evaluate batches of
/// flattened points. Resolution is the cell count per axis (>= 8).
pub fn marching_cubes(
    sdf: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    grad: &mut dyn FnMut(&[f64]) -> Vec<Vec3>,
    bounds: (Vec3, Vec3),
    resolution: usize,
) -> TriangleMesh {
    assert!(resolution >= 8, "marching cubes resolution must be >= 8, got {resolution}");
    let n = resolution;
    let np = n + 1;
    let (lo, hi) = bounds;
    let cell = [
        (hi[0] - lo[0]) / n as f64,
        (hi[1] - lo[1]) / n as f64,
        (hi[2] - lo[2]) / n as f64,
    ];
    let point = |i: usize, j: usize, k: usize| -> Vec3 {
        [
            lo[0] + i as f64 * cell[0],
            lo[1] + j as f64 * cell[1],
            lo[2] + k as f64 * cell[2],
        ]
    };

    // grid values in x-major order idx = (i * np + j) * np + k, chunked eval
    let mut values = Vec::with_capacity(np * np * np);
    {
        let mut pts = Vec::with_capacity(3 * 32768);
        let mut flush = |pts: &mut Vec<f64>, values: &mut Vec<f64>| {
            if !pts.is_empty() {
                values.extend(sdf(pts));
                pts.clear();
            }
        };
        for i in 0..np {
            for j in 0..np {
                for k in 0..np {
                    let p = point(i, j, k);
                    pts.extend_from_slice(&p);
                    if pts.len() >= 3 * 32768 {
                        flush(&mut pts, &mut values);
                    }
                }
            }
        }
        flush(&mut pts, &mut values);
    }
    let val = |i: usize, j: usize, k: usize| values[(i * np + j) * np + k];

    // classic corner layout: 0..3 bottom ring (y), 4..7 top ring
    const CORNER: [[usize; 3]; 8] = [
        [0, 0, 0],
        [1, 0, 0],
        [1, 0, 1],
        [0, 0, 1],
        [0, 1, 0],
        [1, 1, 0],
        [1, 1, 1],
        [0, 1, 1],
    ];
    const EDGE_ENDS: [[usize; 2]; 12] = [
        [0, 1],
        [1, 2],
        [2, 3],
        [3, 0],
        [4, 5],
        [5, 6],
        [6, 7],
        [7, 4],
        [0, 4],
        [1, 5],
        [2, 6],
        [3, 7],
    ];

    let mut mesh = TriangleMesh::default();
    // weld vertices by (lower grid-point index, axis)
    let mut edge_vertex: HashMap<(usize, u8), u32> = HashMap::new();
    let grid_idx = |c: [usize; 3]| (c[0] * np + c[1]) * np + c[2];

    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let mut corner_vals = [0.0f64; 8];
                let mut corner_xyz = [[0usize; 3]; 8];
                let mut cube = 0usize;
                for (c, off) in CORNER.iter().enumerate() {
                    let gx = [i + off[0], j + off[1], k + off[2]];
                    corner_xyz[c] = gx;
                    corner_vals[c] = val(gx[0], gx[1], gx[2]);
                    if corner_vals[c] < 0.0 {
                        cube |= 1 << c;
                    }
                }
                if EDGE_TABLE[cube] == 0 {
                    continue;
                }
                let mut edge_ids = [u32::MAX; 12];
                for (e, ends) in EDGE_ENDS.iter().enumerate() {
                    if EDGE_TABLE[cube] & (1 << e) == 0 {
                        continue;
                    }
                    let (a, b) = (ends[0], ends[1]);
                    let (ga, gb) = (corner_xyz[a], corner_xyz[b]);
                    // canonical key: lower corner + axis
                    let (lo_c, axis) = edge_key(ga, gb);
                    let key = (grid_idx(lo_c), axis);
                    let id = *edge_vertex.entry(key).or_insert_with(|| {
                        let (va, vb) = (corner_vals[a], corner_vals[b]);
                        let t = if (vb - va).abs() < 1e-30 {
                            0.5
                        } else {
                            (0.0 - va) / (vb - va)
                        };
                        let pa = point(ga[0], ga[1], ga[2]);
                        let pb = point(gb[0], gb[1], gb[2]);
                        mesh.vertices.push([
                            pa[0] + t * (pb[0] - pa[0]),
                            pa[1] + t * (pb[1] - pa[1]),
                            pa[2] + t * (pb[2] - pa[2]),
                        ]);
                        (mesh.vertices.len() - 1) as u32
                    });
                    edge_ids[e] = id;
                }
                let tri_row = &TRI_TABLE[cube];
                let mut ti = 0;
                while tri_row[ti] >= 0 {
                    let a = edge_ids[tri_row[ti] as usize];
                    let b = edge_ids[tri_row[ti + 1] as usize];
                    let c = edge_ids[tri_row[ti + 2] as usize];
                    // welding can collapse table triangles; drop degenerates
                    if a != b && b != c && a != c {
                        mesh.triangles.push([a, b, c]);
                    }
                    ti += 3;
                }
            }
        }
    }

    // drop any zero-area triangles that survived index dedup
    mesh.triangles = mesh
        .triangles
        .iter()
        .copied()
        .filter(|t| mesh_area_positive(&mesh.vertices, t))
        .collect();

    if mesh.triangles.is_empty() {
        eprintln!("marching_cubes: empty zero-level set, returning empty mesh");
        mesh.vertices.clear();
        return mesh;
    }

    // per-vertex normals from the SDF gradient
    let flat: Vec<f64> = mesh.vertices.iter().flatten().copied().collect();
    mesh.normals = grad(&flat);
    mesh
}

fn edge_key(a: [usize; 3], b: [usize; 3]) -> ([usize; 3], u8) {
    for axis in 0..3 {
        if a[axis] != b[axis] {
            let lo = if a[axis] < b[axis] { a } else { b };
            return (lo, axis as u8);
        }
    }
    unreachable!("degenerate cube edge")
}

fn mesh_area_positive(vertices: &[Vec3], t: &[u32; 3]) -> bool {
    let a = vertices[t[0] as usize];
    let b = vertices[t[1] as usize];
    let c = vertices[t[2] as usize];
    let ab = sub3(b, a);
    let ac = sub3(c, a);
    let cx = [
        ab[1] * ac[2] - ab[2] * ac[1],
        ab[2] * ac[0] - ab[0] * ac[2],
        ab[0] * ac[1] - ab[1] * ac[0],
    ];
    norm3(cx) > 1e-18
}

/// Area-weighted uniform surface samples of a mesh.
pub fn sample_mesh_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Vec<Vec3> {
    assert!(!mesh.is_empty(), "cannot sample an empty mesh");
    let mut cdf = Vec::with_capacity(mesh.triangles.len());
    let mut acc = 0.0;
    for t in &mesh.triangles {
        acc += mesh.triangle_area(t);
        cdf.push(acc);
    }
    let mut rng = seeded(seed, Stream::MeshSampling);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.gen_range(0.0..acc);
        let ti = cdf.partition_point(|&c| c <= u).min(mesh.triangles.len() - 1);
        let t = &mesh.triangles[ti];
        let a = mesh.vertices[t[0] as usize];
        let b = mesh.vertices[t[1] as usize];
        let c = mesh.vertices[t[2] as usize];
        let (mut r1, r2): (f64, f64) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        r1 = r1.sqrt();
        let (wa, wb, wc) = (1.0 - r1, r1 * (1.0 - r2), r1 * r2);
        out.push([
            wa * a[0] + wb * b[0] + wc * c[0],
            wa * a[1] + wb * b[1] + wc * c[1],
            wa * a[2] + wb * b[2] + wc * c[2],
        ]);
    }
    out
}

/// Symmetric Chamfer distance between point sets, exact (grid-accelerated
/// nearest neighbors with a ring bound that never prunes the true nearest).
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "chamfer of an empty point set");
    0.5 * (mean_nn(a, b) + mean_nn(b, a))
}

fn mean_nn(from: &[Vec3], to: &[Vec3]) -> f64 {
    let grid = PointGrid::build(to);
    let total: f64 = from.iter().map(|&p| grid.nearest_dist(p)).sum();
    total / from.len() as f64
}

struct PointGrid<'a> {
    points: &'a [Vec3],
    cells: HashMap<(i64, i64, i64), Vec<u32>>,
    h: f64,
    origin: Vec3,
    key_max: (i64, i64, i64),
}

impl<'a> PointGrid<'a> {
    fn build(points: &'a [Vec3]) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(hi[2] - lo[2]);
        let target_cells = (points.len() as f64 / 2.0).cbrt().ceil().max(1.0);
        let h = if extent > 0.0 { extent / target_cells } else { 1.0 };
        let mut cells: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
        let mut key_max = (0i64, 0i64, 0i64);
        for (i, p) in points.iter().enumerate() {
            let k = Self::key(p, lo, h);
            key_max = (key_max.0.max(k.0), key_max.1.max(k.1), key_max.2.max(k.2));
            cells.entry(k).or_default().push(i as u32);
        }
        PointGrid {
            points,
            cells,
            h,
            origin: lo,
            key_max,
        }
    }

    fn key(p: &Vec3, origin: Vec3, h: f64) -> (i64, i64, i64) {
        (
            ((p[0] - origin[0]) / h).floor() as i64,
            ((p[1] - origin[1]) / h).floor() as i64,
            ((p[2] - origin[2]) / h).floor() as i64,
        )
    }

    fn nearest_dist(&self, p: Vec3) -> f64 {
        // ring search around the query's cell, clamped into the occupied key
        // range so far-outside queries still start near the data
        let raw = Self::key(&p, self.origin, self.h);
        let c = (
            raw.0.clamp(0, self.key_max.0),
            raw.1.clamp(0, self.key_max.1),
            raw.2.clamp(0, self.key_max.2),
        );
        let mut best = f64::INFINITY;
        let mut seen = 0usize;
        let total_cells = self.cells.len();
        let mut ring = 0i64;
        loop {
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    for dz in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        if let Some(ids) = self.cells.get(&(c.0 + dx, c.1 + dy, c.2 + dz)) {
                            seen += 1;
                            for &i in ids {
                                let d = norm3(sub3(p, self.points[i as usize]));
                                if d < best {
                                    best = d;
                                }
                            }
                        }
                    }
                }
            }
            if seen == total_cells {
                return best; // every point examined
            }
            // any unscanned cell lies outside the box [c-ring, c+ring+1]*h;
            // a point there is at least the query-to-box-boundary margin away
            let mut margin = f64::INFINITY;
            for (axis, (ck, pk)) in [
                (c.0, p[0] - self.origin[0]),
                (c.1, p[1] - self.origin[1]),
                (c.2, p[2] - self.origin[2]),
            ]
            .into_iter()
            .enumerate()
            {
                let _ = axis;
                let lo = (ck - ring) as f64 * self.h;
                let hi = (ck + ring + 1) as f64 * self.h;
                margin = margin.min(pk - lo).min(hi - pk);
            }
            if margin >= 0.0 && best <= margin {
                return best;
            }
            ring += 1;
        }
    }
}

/// Per-pair relative pose errors and their means. Rotation in degrees,
/// translation scaled by 100 after the median-baseline gauge fix.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PoseErrorReport {
    /// (i, j, rpe_r degrees, rpe_t x100) for every pair i < j.
    pub pairs: Vec<(usize, usize, f64, f64)>,
    pub mean_rpe_r: f64,
    pub mean_rpe_t: f64,
    /// Scale applied to the estimated translations (median ratio of pairwise
    /// camera-center baselines).
    pub translation_scale: f64,
}

pub fn relative_pose_error(estimated: &[Pose], reference: &[Pose]) -> Result<PoseErrorReport, String> {
    if estimated.len() != reference.len() {
        return Err(format!(
            "pose count mismatch: {} estimated vs {} reference",
            estimated.len(),
            reference.len()
        ));
    }
    if estimated.len() < 2 {
        return Err("need at least 2 poses for relative pose error".into());
    }
    let n = estimated.len();

    // gauge fix: joint pose+shape optimization leaves a global scale free
    let mut ratios = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let be = norm3(sub3(estimated[i].center(), estimated[j].center()));
            let br = norm3(sub3(reference[i].center(), reference[j].center()));
            if be > 1e-12 && br > 1e-12 {
                ratios.push(br / be);
            }
        }
    }
    let scale = if ratios.is_empty() {
        1.0
    } else {
        ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ratios[ratios.len() / 2]
    };
    let scaled: Vec<Pose> = estimated
        .iter()
        .map(|p| Pose {
            r: p.r,
            t: [p.t[0] * scale, p.t[1] * scale, p.t[2] * scale],
        })
        .collect();

    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    let (mut sum_r, mut sum_t) = (0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let d_ref = relative_pose(&reference[i], &reference[j]);
            let d_est = relative_pose(&scaled[i], &scaled[j]);
            let e = relative_pose(&d_est, &d_ref);
            // E = delta_ref^{-1} . delta_est expressed as transforms
            let e = Pose {
                r: e.r,
                t: e.t,
            };
            let rpe_r = so3::rotation_angle(&e.r).to_degrees();
            let rpe_t = norm3(e.t) * 100.0;
            pairs.push((i, j, rpe_r, rpe_t));
            sum_r += rpe_r;
            sum_t += rpe_t;
        }
    }
    let count = pairs.len() as f64;
    Ok(PoseErrorReport {
        pairs,
        mean_rpe_r: sum_r / count,
        mean_rpe_t: sum_t / count,
        translation_scale: scale,
    })
}

/// ASCII OBJ with v/vn/f records.
pub fn write_obj(mesh: &TriangleMesh, path: &Path) -> std::io::Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v[0], v[1], v[2])?;
    }
    for nrm in &mesh.normals {
        writeln!(w, "vn {} {} {}", nrm[0], nrm[1], nrm[2])?;
    }
    for t in &mesh.triangles {
        writeln!(
            w,
            "f {}//{} {}//{} {}//{}",
            t[0] + 1,
            t[0] + 1,
            t[1] + 1,
            t[1] + 1,
            t[2] + 1,
            t[2] + 1
        )?;
    }
    w.flush()
}

pub fn read_obj(path: &Path) -> std::io::Result<TriangleMesh> {
    let content = std::fs::read_to_string(path)?;
    let mut mesh = TriangleMesh::default();
    for (lineno, line) in content.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut p = [0.0; 3];
                for x in p.iter_mut() {
                    *x = it
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| bad_obj(path, lineno, "vertex"))?;
                }
                mesh.vertices.push(p);
            }
            Some("vn") => {
                let mut p = [0.0; 3];
                for x in p.iter_mut() {
                    *x = it
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| bad_obj(path, lineno, "normal"))?;
                }
                mesh.normals.push(p);
            }
            Some("f") => {
                let mut idx = [0u32; 3];
                for x in idx.iter_mut() {
                    let tok = it.next().ok_or_else(|| bad_obj(path, lineno, "face"))?;
                    let first = tok.split('/').next().unwrap();
                    let i: i64 = first.parse().map_err(|_| bad_obj(path, lineno, "face index"))?;
                    *x = (i - 1) as u32;
                }
                mesh.triangles.push(idx);
            }
            _ => {}
        }
    }
    Ok(mesh)
}

fn bad_obj(path: &Path, lineno: usize, what: &str) -> std::io::Error {
    std::io::Error::new(
        std::io::ErrorKind::InvalidData,
        format!("{}:{}: unparsable {what}", path.display(), lineno + 1),
    )
}
