//! Batched differentiable render graph shared by the trainer and the
//! no-grad full-image renderer.

use crate::autodiff::{Binding, Tape, Tensor, Value};
use crate::cameras::{pixel_to_ray, ray_sphere_range, Intrinsics, Pose};
use crate::encoding::encode_graph;
use crate::networks::Model;
use crate::num::Real;
use crate::rngs::{seeded_step, Stream};
use crate::scenes::{BACKGROUND_GRAY, DEPTH_MISS};

use super::{alpha_graph, composite_graph, sample_rays_batch, SamplingConfig};

/// Differentiable per-batch render: all values on one tape.
pub struct RenderGraph {
    /// [r, 3] composited color.
    pub rgb: Value,
    /// [r, 1] composited (unnormalized) depth.
    pub depth: Value,
    /// [r, 1] accumulated opacity.
    pub opacity: Value,
    /// [r*s, 1] per-section weights.
    pub weights: Value,
    /// [r*(s+1), 1] endpoint SDF values.
    pub sdf_end: Value,
    /// [r*s, 3] SDF gradients at section midpoints.
    pub normals_mid: Value,
    /// [r, 3] weight-composited normal (for normal maps).
    pub normal_render: Value,
    /// The sharpness scalar.
    pub s: Value,
}

/// Assemble the volume-rendering graph for a batch of rays.
///
/// `t_end` holds each ray's sorted endpoint distances, row-major
/// [n_rays * (sections+1)]. Origins/dirs are graph values so pose gradients
/// flow through sample positions.
#[allow(clippy::too_many_arguments)]
pub fn build_render_graph<T: Real>(
    tape: &Tape<T>,
    binding: &Binding,
    model: &Model<T>,
    origins: Value,
    dirs: Value,
    t_end: &[f64],
    n_rays: usize,
    sections: usize,
    level_pos: f64,
    level_dir: f64,
) -> RenderGraph {
    assert_eq!(t_end.len(), n_rays * (sections + 1));

    let t_end_col = tape.constant(Tensor::new(
        vec![n_rays * (sections + 1), 1],
        t_end.iter().map(|&v| T::from_f64(v)).collect(),
    ));
    let mut mid = Vec::with_capacity(n_rays * sections);
    for r in 0..n_rays {
        let row = &t_end[r * (sections + 1)..(r + 1) * (sections + 1)];
        for i in 0..sections {
            mid.push(T::from_f64(0.5 * (row[i] + row[i + 1])));
        }
    }
    let t_mid_col = tape.constant(Tensor::new(vec![n_rays * sections, 1], mid));

    // sample positions x = o + t v
    let x_end = {
        let o = tape.tile_rows(origins, sections + 1);
        let v = tape.tile_rows(dirs, sections + 1);
        tape.add(o, tape.mul(v, t_end_col))
    };
    let x_mid = {
        let o = tape.tile_rows(origins, sections);
        let v = tape.tile_rows(dirs, sections);
        tape.add(o, tape.mul(v, t_mid_col))
    };

    // endpoint SDF for alpha; midpoint SDF/feature/normal for color
    let end_eval = model.sdf.eval_graph(tape, binding, x_end, level_pos, false);
    let mid_eval = model.sdf.eval_graph(tape, binding, x_mid, level_pos, true);
    let normals_mid = mid_eval.normals.expect("midpoint eval carries normals");

    let v_mid = tape.tile_rows(dirs, sections);
    let dir_enc = encode_graph(tape, v_mid, level_dir, model.color.num_freqs_dir, true);
    let rgb_mid = model
        .color
        .eval_graph(tape, binding, x_mid, dir_enc, normals_mid, mid_eval.features);

    let s = model.deviation.s_graph(tape, binding);
    let alphas = alpha_graph(tape, end_eval.sdf, s, n_rays, sections);
    let cg = composite_graph(tape, alphas, rgb_mid, t_mid_col, sections);
    let normal_render = tape.sum_segments(tape.mul(normals_mid, cg.weights), sections);

    RenderGraph {
        rgb: cg.rgb,
        depth: cg.depth,
        opacity: cg.opacity,
        weights: cg.weights,
        sdf_end: end_eval.sdf,
        normals_mid,
        normal_render,
        s,
    }
}

/// A fully rendered view (no gradients).
pub struct RenderedImage {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<[f64; 3]>,
    /// Ray-distance depth; DEPTH_MISS where no geometry (or ray misses the
    /// bounding sphere).
    pub depth: Vec<f64>,
    /// Composited SDF gradient per pixel.
    pub normal: Vec<[f64; 3]>,
    pub opacity: Vec<f64>,
}

/// Render a full view through the volume renderer (the trainable path, with
/// parameters bound as constants).
#[allow(clippy::too_many_arguments)]
pub fn render_image<T: Real>(
    model: &Model<T>,
    pose: &Pose,
    intrinsics: &Intrinsics,
    sampling: &SamplingConfig,
    bounding_radius: f64,
    level_pos: f64,
    level_dir: f64,
    seed: u64,
) -> RenderedImage {
    let npix = intrinsics.width * intrinsics.height;
    let mut out = RenderedImage {
        width: intrinsics.width,
        height: intrinsics.height,
        rgb: vec![[BACKGROUND_GRAY; 3]; npix],
        depth: vec![DEPTH_MISS; npix],
        normal: vec![[0.0; 3]; npix],
        opacity: vec![0.0; npix],
    };
    let sections = sampling.n_sections();
    let mut rng = seeded_step(seed, Stream::RaySampling, 0);

    // chunk pixels so tape memory stays bounded
    let chunk = 2048usize;
    let mut pixel_ids: Vec<usize> = Vec::with_capacity(chunk);
    let mut origins: Vec<[f64; 3]> = Vec::with_capacity(chunk);
    let mut dirs: Vec<[f64; 3]> = Vec::with_capacity(chunk);
    let mut ranges: Vec<(f64, f64)> = Vec::with_capacity(chunk);

    let flush = |pixel_ids: &mut Vec<usize>,
                     origins: &mut Vec<[f64; 3]>,
                     dirs: &mut Vec<[f64; 3]>,
                     ranges: &mut Vec<(f64, f64)>,
                     rng: &mut crate::rngs::DetRng,
                     out: &mut RenderedImage| {
        if pixel_ids.is_empty() {
            return;
        }
        let mut sdf_fn = |pts: &[f64]| -> Vec<f64> {
            let p: Vec<T> = pts.iter().map(|&v| T::from_f64(v)).collect();
            model
                .sdf
                .sdf_values(&model.params, &p, level_pos)
                .into_iter()
                .map(|v| v.to_f64())
                .collect()
        };
        let t = sample_rays_batch(origins, dirs, ranges, &mut sdf_fn, sampling, rng);
        let n_rays = origins.len();
        let mut t_flat = Vec::with_capacity(n_rays * (sections + 1));
        for row in &t {
            t_flat.extend_from_slice(row);
        }
        let tape = Tape::<T>::new();
        let binding = Binding::bind_constants(&tape, &model.params);
        let o_node = tape.constant(Tensor::new(
            vec![n_rays, 3],
            origins.iter().flatten().map(|&v| T::from_f64(v)).collect(),
        ));
        let v_node = tape.constant(Tensor::new(
            vec![n_rays, 3],
            dirs.iter().flatten().map(|&v| T::from_f64(v)).collect(),
        ));
        let g = build_render_graph(
            &tape, &binding, model, o_node, v_node, &t_flat, n_rays, sections, level_pos,
            level_dir,
        );
        let rgb = tape.value(g.rgb);
        let depth = tape.value(g.depth);
        let normal = tape.value(g.normal_render);
        let opacity = tape.value(g.opacity);
        for (k, &pid) in pixel_ids.iter().enumerate() {
            out.rgb[pid] = [
                rgb.row(k)[0].to_f64(),
                rgb.row(k)[1].to_f64(),
                rgb.row(k)[2].to_f64(),
            ];
            let op = opacity.data()[k].to_f64();
            out.opacity[pid] = op;
            out.depth[pid] = if op > 0.5 {
                depth.data()[k].to_f64()
            } else {
                DEPTH_MISS
            };
            out.normal[pid] = [
                normal.row(k)[0].to_f64(),
                normal.row(k)[1].to_f64(),
                normal.row(k)[2].to_f64(),
            ];
        }
        pixel_ids.clear();
        origins.clear();
        dirs.clear();
        ranges.clear();
    };

    for row in 0..intrinsics.height {
        for col in 0..intrinsics.width {
            let ray = pixel_to_ray(row, col, intrinsics, pose);
            if let Some(range) = ray_sphere_range(ray.origin, ray.dir, bounding_radius) {
                pixel_ids.push(row * intrinsics.width + col);
                origins.push(ray.origin);
                dirs.push(ray.dir);
                ranges.push(range);
                if pixel_ids.len() == chunk {
                    flush(&mut pixel_ids, &mut origins, &mut dirs, &mut ranges, &mut rng, &mut out);
                }
            }
        }
    }
    flush(&mut pixel_ids, &mut origins, &mut dirs, &mut ranges, &mut rng, &mut out);
    out
}
