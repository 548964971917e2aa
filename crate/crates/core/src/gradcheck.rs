//! Gradient-integrity suite: every tape primitive and every loss term is
//! checked against central finite differences in double precision.
//!
//! Finite differences are only meaningful where the function is smooth;
//! value-dependent decisions (sample distances, surface-crossing indices,
//! projection selections) are therefore frozen at the base point, and
//! coordinates where the central difference itself has not converged (a kink
//! straddled inside the probe width) are excluded rather than compared
//! against a derivative that does not exist there.

use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{fd, Binding, ParamId, SampleGrid, Tape, Tensor, Value};
use crate::cameras::{normalize3, pixel_camera_dir, ray_sphere_range};
use crate::encoding::schedule_level;
use crate::features::{nearest_source_views, FeatureBank, FeatureMap};
use crate::losses::{
    depth_loss, eikonal_loss, feature_loss, mask_loss, rgb_loss, total_loss, FeatureSourceGroup,
    LossWeights,
};
use crate::networks::{Model, NetworkConfig, PoseMode};
use crate::rendering::{build_render_graph, sample_rays_batch, surface_crossing, SamplingConfig};
use crate::rngs::{seeded, seeded_step, DetRng, Stream};
use crate::scenes::{default_intrinsics, AnalyticScene, RigConfig, SceneDataset, SceneKind};

pub struct CheckOutcome {
    pub name: String,
    pub seeds: usize,
    pub coords_checked: usize,
    pub coords_skipped_nonsmooth: usize,
    pub worst_rel_err: f64,
    pub failure: Option<String>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

/// Run the whole suite; the acceptance gate uses n_seeds >= 100.
pub fn run_suite(n_seeds: usize) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    out.push(check_primitives_suite(n_seeds));
    for term in [
        LossTerm::Rgb,
        LossTerm::Eikonal,
        LossTerm::Mask,
        LossTerm::Feature,
        LossTerm::Depth,
        LossTerm::Total,
    ] {
        out.push(check_loss_term(term, n_seeds));
    }
    out
}

// ---------------------------------------------------------------------------
// primitive ops
// ---------------------------------------------------------------------------

fn check_primitives_suite(n_seeds: usize) -> CheckOutcome {
    let mut worst = 0.0f64;
    for seed in 0..n_seeds as u64 {
        if let Err(e) = check_primitives(seed, &mut worst) {
            return CheckOutcome {
                name: "primitive ops".into(),
                seeds: n_seeds,
                coords_checked: 0,
                coords_skipped_nonsmooth: 0,
                worst_rel_err: worst,
                failure: Some(e),
            };
        }
    }
    CheckOutcome {
        name: "primitive ops".into(),
        seeds: n_seeds,
        coords_checked: n_seeds * 33,
        coords_skipped_nonsmooth: 0,
        worst_rel_err: worst,
        failure: None,
    }
}

/// One seeded sweep over every tape primitive. Inputs stay away from kinks
/// and poles; random output weights scalarize multi-output ops.
pub fn check_primitives(seed: u64, worst: &mut f64) -> Result<(), String> {
    let mut rng = seeded(seed, Stream::BatchSampling);
    type BuildFn = Box<dyn Fn(&Tape<f64>, Value) -> Value>;
    let safe = |rng: &mut DetRng, n: usize| -> Vec<f64> {
        (0..n)
            .map(|_| {
                let v: f64 = rng.gen_range(-2.0..2.0);
                if v.abs() < 0.15 {
                    if v >= 0.0 {
                        v + 0.3
                    } else {
                        v - 0.3
                    }
                } else {
                    v
                }
            })
            .collect()
    };
    let positive =
        |rng: &mut DetRng, n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(0.2..2.5)).collect() };

    let max2_consts = [0.5, -0.5, 1.9, -1.9, 0.7, -0.7];
    let max2_inputs: Vec<f64> = (0..6)
        .map(|i| loop {
            let v: f64 = rng.gen_range(-2.0..2.0);
            if (v - max2_consts[i]).abs() > 0.05 {
                break v;
            }
        })
        .collect();
    let bilinear_inputs: Vec<f64> = (0..4)
        .map(|_| loop {
            let v: f64 = rng.gen_range(0.1..2.9);
            let f = v.fract();
            if f > 0.1 && f < 0.9 {
                break v;
            }
        })
        .collect();

    let cases: Vec<(&str, Vec<f64>, Vec<usize>, BuildFn)> = vec![
        ("add", safe(&mut rng, 6), vec![2, 3], Box::new(|t, x| t.add(x, x))),
        (
            "sub",
            safe(&mut rng, 6),
            vec![2, 3],
            Box::new(|t, x| {
                let c = t.constant(Tensor::new(vec![2, 3], vec![0.3, -0.4, 0.9, 1.2, -1.5, 0.1]));
                t.sub(x, c)
            }),
        ),
        (
            "mul",
            safe(&mut rng, 6),
            vec![2, 3],
            Box::new(|t, x| {
                let c = t.constant(Tensor::new(vec![2, 3], vec![1.3, -0.2, 0.6, -1.1, 0.5, 2.0]));
                t.mul(x, c)
            }),
        ),
        ("neg", safe(&mut rng, 6), vec![6], Box::new(|t, x| t.neg(x))),
        ("recip", positive(&mut rng, 6), vec![6], Box::new(|t, x| t.recip(x))),
        ("exp", safe(&mut rng, 6), vec![6], Box::new(|t, x| t.exp(x))),
        ("ln", positive(&mut rng, 6), vec![6], Box::new(|t, x| t.ln(x))),
        ("sin", safe(&mut rng, 6), vec![6], Box::new(|t, x| t.sin(x))),
        ("cos", safe(&mut rng, 6), vec![6], Box::new(|t, x| t.cos(x))),
        ("sqrt", positive(&mut rng, 6), vec![6], Box::new(|t, x| t.sqrt(x))),
        ("sigmoid", safe(&mut rng, 6), vec![6], Box::new(|t, x| t.sigmoid(x))),
        ("gelu", safe(&mut rng, 6), vec![6], Box::new(|t, x| t.gelu(x))),
        ("softplus", safe(&mut rng, 6), vec![6], Box::new(|t, x| t.softplus(x))),
        ("abs", safe(&mut rng, 6), vec![6], Box::new(|t, x| t.abs(x))),
        ("relu", safe(&mut rng, 6), vec![6], Box::new(|t, x| t.relu(x))),
        ("scale", safe(&mut rng, 6), vec![6], Box::new(|t, x| t.scale(x, -1.7))),
        ("add_scalar", safe(&mut rng, 6), vec![6], Box::new(|t, x| t.add_scalar(x, 0.9))),
        ("sum_all", safe(&mut rng, 6), vec![6], Box::new(|t, x| t.sum_all(x))),
        ("mean_all", safe(&mut rng, 6), vec![6], Box::new(|t, x| t.mean_all(x))),
        ("norm2_rows", safe(&mut rng, 6), vec![2, 3], Box::new(|t, x| t.norm2_rows(x))),
        (
            "sum_segments",
            safe(&mut rng, 6),
            vec![6, 1],
            Box::new(|t, x| t.sum_segments(x, 3)),
        ),
        ("tile_rows", safe(&mut rng, 4), vec![2, 2], Box::new(|t, x| t.tile_rows(x, 3))),
        (
            "cumprod_exclusive",
            positive(&mut rng, 8),
            vec![8, 1],
            Box::new(|t, x| t.cumprod_exclusive(x, 4)),
        ),
        ("slice_cols", safe(&mut rng, 8), vec![2, 4], Box::new(|t, x| t.slice_cols(x, 1, 3))),
        ("slice_rows", safe(&mut rng, 8), vec![4, 2], Box::new(|t, x| t.slice_rows(x, 1, 3))),
        ("transpose", safe(&mut rng, 6), vec![2, 3], Box::new(|t, x| t.transpose(x))),
        ("rodrigues", safe(&mut rng, 3), vec![3], Box::new(|t, x| t.rodrigues(x))),
        (
            "gather_rows",
            safe(&mut rng, 8),
            vec![4, 2],
            Box::new(|t, x| t.gather_rows(x, Arc::new(vec![0, 2, 2, 3]))),
        ),
        (
            "concat_cols",
            safe(&mut rng, 6),
            vec![2, 3],
            Box::new(|t, x| {
                let a = t.slice_cols(x, 0, 1);
                t.concat_cols(&[a, x])
            }),
        ),
        (
            "concat_rows",
            safe(&mut rng, 6),
            vec![2, 3],
            Box::new(|t, x| {
                let a = t.slice_rows(x, 0, 1);
                t.concat_rows(&[a, x])
            }),
        ),
        (
            "max2",
            max2_inputs,
            vec![6],
            Box::new(move |t, x| {
                let other = t.constant(Tensor::new(vec![6], max2_consts.to_vec()));
                t.maximum(x, other)
            }),
        ),
        (
            "mul_broadcast_col",
            safe(&mut rng, 6),
            vec![2, 3],
            Box::new(|t, x| {
                let col = t.slice_cols(x, 0, 1);
                t.mul(x, col)
            }),
        ),
        (
            "add_broadcast_row",
            safe(&mut rng, 6),
            vec![2, 3],
            Box::new(|t, x| {
                let row = t.slice_rows(x, 0, 1);
                t.add(x, row)
            }),
        ),
        (
            "matmul",
            safe(&mut rng, 6),
            vec![2, 3],
            Box::new(|t, x| {
                let w = t.constant(Tensor::new(vec![3, 2], vec![0.3, -0.9, 1.1, 0.4, -0.6, 0.8]));
                t.matmul(x, w)
            }),
        ),
        (
            "bilinear_sample",
            bilinear_inputs,
            vec![2, 2],
            Box::new(|t, x| {
                let grid = Arc::new(SampleGrid {
                    channels: 2,
                    height: 4,
                    width: 4,
                    data: (0..32).map(|i| ((i * 7) % 13) as f64 * 0.31 - 1.9).collect(),
                });
                t.bilinear_sample(x, grid)
            }),
        ),
    ];

    for (name, x0, shape, build) in cases {
        let weights: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut eval = |xs: &[f64]| -> f64 {
            let t = Tape::<f64>::new();
            let x = t.leaf(Tensor::new(shape.clone(), xs.to_vec()));
            let y = build(&t, x);
            t.value(y)
                .data()
                .iter()
                .zip(weights.iter())
                .map(|(&v, &w)| v * w)
                .sum()
        };
        let t = Tape::<f64>::new();
        let x = t.leaf(Tensor::new(shape.clone(), x0.clone()));
        let y = build(&t, x);
        let yv = t.value(y);
        let w = t.constant(Tensor::new(
            yv.shape().to_vec(),
            weights[..yv.numel()].to_vec(),
        ));
        let root = t.sum_all(t.mul(y, w));
        t.backward(root);
        let analytic = t.grad(x).unwrap();
        for i in 0..x0.len() {
            let fdv = fd::central_diff(&mut eval, &x0, i, fd::FD_EPS);
            let err = fd::rel_err(fdv, analytic.data()[i], 1e-6);
            if err > *worst {
                *worst = err;
            }
            if err > fd::FD_REL_TOL {
                return Err(format!(
                    "primitive {name} (seed {seed}) coordinate {i}: analytic {} vs central difference {fdv} (rel {err:.2e})",
                    analytic.data()[i]
                ));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// loss terms through the full differentiable pipeline
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossTerm {
    Rgb,
    Eikonal,
    Mask,
    Feature,
    Depth,
    Total,
}

impl LossTerm {
    pub fn name(self) -> &'static str {
        match self {
            LossTerm::Rgb => "rgb loss",
            LossTerm::Eikonal => "eikonal loss",
            LossTerm::Mask => "mask loss",
            LossTerm::Feature => "feature loss",
            LossTerm::Depth => "depth loss",
            LossTerm::Total => "total loss",
        }
    }
}

/// Compact architecture so finite differences stay fast; every structural
/// path (skip layer, tangents, rodrigues, bilinear sampling) matches the
/// full model.
fn small_network() -> NetworkConfig {
    NetworkConfig {
        sdf_hidden_layers: 4,
        sdf_hidden_size: 32,
        sdf_skip_layer: 2,
        n_features: 16,
        color_hidden_layers: 2,
        color_hidden_size: 32,
        pose_layers: 3,
        pose_hidden_size: 16,
        fourier_m: 8,
        ..NetworkConfig::default()
    }
}

/// Everything value-dependent, frozen per seed so the checked function is
/// smooth in the parameters.
struct FrozenForward {
    rays: Vec<([f64; 3], [f64; 3], usize, (usize, usize))>,
    t_flat: Vec<f64>,
    sections: usize,
    targets: Vec<[f64; 3]>,
    masks: Vec<bool>,
    dbars: Vec<f64>,
    level_pos: f64,
    level_dir: f64,
    valid_rows: Vec<usize>,
    idx_i: Vec<usize>,
    t_i: Vec<f64>,
    dt: Vec<f64>,
    feature_plan: Vec<Vec<(usize, usize)>>,
    source_groups: Vec<(usize, Vec<usize>)>,
    ref_feats: Tensor<f64>,
}

struct LossProbe {
    model: Model<f64>,
    dataset: SceneDataset,
    maps: Vec<FeatureMap>,
    frozen: FrozenForward,
}

impl LossProbe {
    fn new(seed: u64) -> LossProbe {
        let dataset = SceneDataset::generate(
            AnalyticScene::new(SceneKind::Sphere { radius: 0.5 }),
            RigConfig {
                n_views: 3,
                ..RigConfig::default()
            },
            default_intrinsics(32),
            seed ^ 0x51ce,
        )
        .unwrap();
        let gt = dataset.gt_poses();
        let mut model: Model<f64> = Model::new(&small_network(), 3, PoseMode::Delta, gt, seed);
        // nudge parameters off the structured init so gradients are generic
        // (the zero pose head would otherwise hide upstream paths)
        let mut rng = seeded(seed, Stream::PosePerturbation);
        let ids: Vec<ParamId> = model.params.iter().map(|(id, _)| id).collect();
        for id in ids {
            for v in model.params.get_mut(id).value.data_mut() {
                *v += rng.gen_range(-0.02..0.02);
            }
        }
        let bank = FeatureBank::new(seed);
        let maps: Vec<FeatureMap> = dataset
            .views
            .iter()
            .map(|v| bank.extract(&v.image, dataset.meta.width, dataset.meta.height))
            .collect();

        let frozen = Self::freeze(&model, &dataset, &maps, seed);
        LossProbe {
            model,
            dataset,
            maps,
            frozen,
        }
    }

    fn freeze(
        model: &Model<f64>,
        dataset: &SceneDataset,
        maps: &[FeatureMap],
        seed: u64,
    ) -> FrozenForward {
        let mut rng = seeded_step(seed, Stream::BatchSampling, 1);
        let n_rays_want = 6;
        let poses: Vec<crate::cameras::Pose> = (0..dataset.meta.views)
            .map(|v| model.pose.eval_pose(&model.params, v))
            .collect();
        let npix = dataset.meta.width * dataset.meta.height;
        let interiors: Vec<Vec<usize>> = dataset
            .views
            .iter()
            .map(|v| {
                v.mask
                    .iter()
                    .enumerate()
                    .filter(|(_, &m)| m)
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect();
        let mut rays = Vec::new();
        while rays.len() < n_rays_want {
            let view = rng.gen_range(0..dataset.meta.views);
            // bias toward interior pixels so surface crossings exist
            let pix = if rng.gen_bool(0.7) && !interiors[view].is_empty() {
                interiors[view][rng.gen_range(0..interiors[view].len())]
            } else {
                rng.gen_range(0..npix)
            };
            let (row, col) = (pix / dataset.meta.width, pix % dataset.meta.width);
            let pose = &poses[view];
            let d_cam = pixel_camera_dir(row, col, &dataset.intrinsics);
            let dir = normalize3(crate::cameras::mat_t_vec(&pose.r, d_cam));
            let origin = pose.center();
            if ray_sphere_range(origin, dir, dataset.meta.bounding_radius).is_some() {
                rays.push((origin, dir, view, (row, col), pix));
            }
        }
        rays.sort_by_key(|r| r.2);

        let sampling = SamplingConfig {
            n_coarse: 10,
            n_importance_rounds: 1,
            n_importance_per_round: 4,
            jitter: true,
            up_sample_s_base: 32.0,
        };
        let sections = sampling.n_sections();
        let origins: Vec<[f64; 3]> = rays.iter().map(|r| r.0).collect();
        let dirs: Vec<[f64; 3]> = rays.iter().map(|r| r.1).collect();
        let ranges: Vec<(f64, f64)> = rays
            .iter()
            .map(|r| ray_sphere_range(r.0, r.1, dataset.meta.bounding_radius).unwrap())
            .collect();
        let enc = crate::encoding::PositionalEncodingConfig::default();
        let level_pos = schedule_level(3, 10, enc.num_freqs_position, &enc);
        let level_dir = schedule_level(3, 10, enc.num_freqs_direction, &enc);
        let mut srng = seeded_step(seed, Stream::RaySampling, 1);
        let mut sdf_fn =
            |pts: &[f64]| -> Vec<f64> { model.sdf.sdf_values(&model.params, pts, level_pos) };
        let t_rows = sample_rays_batch(&origins, &dirs, &ranges, &mut sdf_fn, &sampling, &mut srng);
        let mut t_flat = Vec::new();
        for r in &t_rows {
            t_flat.extend_from_slice(r);
        }

        // base forward for the surface-crossing and projection plans
        let tape = Tape::<f64>::new();
        let binding = Binding::bind_constants(&tape, &model.params);
        let o_node = tape.constant(Tensor::new(
            vec![rays.len(), 3],
            origins.iter().flatten().copied().collect(),
        ));
        let v_node = tape.constant(Tensor::new(
            vec![rays.len(), 3],
            dirs.iter().flatten().copied().collect(),
        ));
        let g = build_render_graph(
            &tape, &binding, model, o_node, v_node, &t_flat, rays.len(), sections, level_pos,
            level_dir,
        );
        let sdf_vals = tape.value(g.sdf_end);
        let mut valid_rows = Vec::new();
        let mut idx_i = Vec::new();
        let mut t_i = Vec::new();
        let mut dt = Vec::new();
        for r in 0..rays.len() {
            let row = &t_flat[r * (sections + 1)..(r + 1) * (sections + 1)];
            let svals: Vec<f64> = (0..=sections)
                .map(|k| sdf_vals.data()[r * (sections + 1) + k])
                .collect();
            if let Some((i, _)) = surface_crossing(row, &svals) {
                valid_rows.push(r);
                idx_i.push(r * (sections + 1) + i);
                t_i.push(row[i]);
                dt.push(row[i + 1] - row[i]);
            }
        }

        let centers: Vec<[f64; 3]> = poses.iter().map(|p| p.center()).collect();
        let mut by_source: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for (ki, &r) in valid_rows.iter().enumerate() {
            for &s in &nearest_source_views(&centers, rays[r].2, 2) {
                by_source.entry(s).or_default().push(ki);
            }
        }
        let source_groups: Vec<(usize, Vec<usize>)> = by_source.into_iter().collect();

        let nc = crate::features::FEATURE_CHANNELS;
        let mut ref_rows = Vec::new();
        for &r in &valid_rows {
            let (row, col) = rays[r].3;
            let u = FeatureMap::pixel_to_cell(col as f64 + 0.5);
            let v = FeatureMap::pixel_to_cell(row as f64 + 0.5);
            ref_rows.extend(maps[rays[r].2].sample(u, v));
        }
        let ref_feats = Tensor::new(vec![valid_rows.len(), nc], ref_rows);

        // run the feature loss once unfrozen to capture its selection plan
        let feature_plan = if valid_rows.is_empty() {
            Vec::new()
        } else {
            let k = valid_rows.len();
            let idx_next: Vec<usize> = idx_i.iter().map(|&i| i + 1).collect();
            let sdf_i = tape.gather_rows(g.sdf_end, Arc::new(idx_i.clone()));
            let sdf_n = tape.gather_rows(g.sdf_end, Arc::new(idx_next));
            let t_i_c = tape.constant(Tensor::new(vec![k, 1], t_i.clone()));
            let dt_c = tape.constant(Tensor::new(vec![k, 1], dt.clone()));
            let den = tape.sub(sdf_i, sdf_n);
            let tstar = tape.add(t_i_c, tape.mul(tape.mul(sdf_i, dt_c), tape.recip(den)));
            let o_k = tape.gather_rows(o_node, Arc::new(valid_rows.clone()));
            let v_k = tape.gather_rows(v_node, Arc::new(valid_rows.clone()));
            let x_star = tape.add(o_k, tape.mul(v_k, tstar));
            let groups: Vec<FeatureSourceGroup<f64>> = source_groups
                .iter()
                .map(|(src, rows)| {
                    let p = &poses[*src];
                    FeatureSourceGroup {
                        rows: rows.clone(),
                        pose_r: tape.constant(Tensor::new(
                            vec![3, 3],
                            p.r.iter().flatten().copied().collect(),
                        )),
                        pose_t: tape.constant(Tensor::new(vec![1, 3], p.t.to_vec())),
                        grid: maps[*src].to_sample_grid(),
                    }
                })
                .collect();
            feature_loss(&tape, x_star, &ref_feats, &groups, &dataset.intrinsics, 2, None).plans
        };

        FrozenForward {
            rays: rays.iter().map(|r| (r.0, r.1, r.2, r.3)).collect(),
            t_flat,
            sections,
            targets: rays.iter().map(|r| dataset.views[r.2].image[r.4]).collect(),
            masks: rays.iter().map(|r| dataset.views[r.2].mask[r.4]).collect(),
            dbars: rays.iter().map(|r| dataset.views[r.2].depth[r.4]).collect(),
            level_pos,
            level_dir,
            valid_rows,
            idx_i,
            t_i,
            dt,
            feature_plan,
            source_groups,
            ref_feats,
        }
    }

    /// Build the chosen loss on a fresh tape; returns (tape, binding, node).
    fn forward(&self, term: LossTerm) -> (Tape<f64>, Binding, Value) {
        let tape = Tape::<f64>::new();
        let binding = Binding::bind_all(&tape, &self.model.params);
        let f = &self.frozen;
        let n_rays = f.rays.len();

        let mut view_nodes: std::collections::BTreeMap<usize, (Value, Value)> = Default::default();
        let mut origin_blocks = Vec::new();
        let mut dir_blocks = Vec::new();
        let mut i = 0;
        while i < n_rays {
            let view = f.rays[i].2;
            let mut j = i;
            while j < n_rays && f.rays[j].2 == view {
                j += 1;
            }
            let (r_node, t_node) = *view_nodes.entry(view).or_insert_with(|| {
                let g = self.model.pose.eval_graph(&tape, &binding, view);
                (g.r, g.t)
            });
            let o_row = tape.neg(tape.matmul(t_node, r_node));
            let d_cam: Vec<f64> = (i..j)
                .flat_map(|k| {
                    let (row, col) = f.rays[k].3;
                    pixel_camera_dir(row, col, &self.dataset.intrinsics)
                })
                .collect();
            let d_cam = tape.constant(Tensor::new(vec![j - i, 3], d_cam));
            let v_world = tape.matmul(d_cam, r_node);
            let inv_norm = tape.recip(tape.norm2_rows(v_world));
            dir_blocks.push(tape.mul(v_world, inv_norm));
            origin_blocks.push(tape.tile_rows(o_row, j - i));
            i = j;
        }
        let origins = tape.concat_rows(&origin_blocks);
        let dirs = tape.concat_rows(&dir_blocks);

        let g = build_render_graph(
            &tape,
            &binding,
            &self.model,
            origins,
            dirs,
            &f.t_flat,
            n_rays,
            f.sections,
            f.level_pos,
            f.level_dir,
        );

        let targets = tape.constant(Tensor::new(
            vec![n_rays, 3],
            f.targets.iter().flatten().copied().collect(),
        ));
        let l_rgb = rgb_loss(&tape, g.rgb, targets);
        let l_eik = eikonal_loss(&tape, g.normals_mid);
        let masks = tape.constant(Tensor::new(
            vec![n_rays, 1],
            f.masks.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
        ));
        let l_mask = mask_loss(&tape, g.opacity, masks);

        let depth_rows: Vec<usize> = (0..n_rays).filter(|&r| f.dbars[r] > 0.0).collect();
        let l_depth = if depth_rows.is_empty() {
            tape.constant(Tensor::scalar(0.0))
        } else {
            let dbar = tape.constant(Tensor::new(
                vec![depth_rows.len(), 1],
                depth_rows.iter().map(|&r| f.dbars[r]).collect(),
            ));
            let views: Vec<usize> = depth_rows.iter().map(|&r| f.rays[r].2).collect();
            let d_sel = tape.gather_rows(g.depth, Arc::new(depth_rows));
            let a_sel = tape.gather_rows(
                binding.leaf(self.model.undistort.alpha),
                Arc::new(views.clone()),
            );
            let b_sel = tape.gather_rows(binding.leaf(self.model.undistort.beta), Arc::new(views));
            depth_loss(&tape, d_sel, dbar, a_sel, b_sel)
        };

        let l_feature = if f.valid_rows.is_empty() {
            tape.constant(Tensor::scalar(0.0))
        } else {
            let k = f.valid_rows.len();
            let idx_next: Vec<usize> = f.idx_i.iter().map(|&i| i + 1).collect();
            let sdf_i = tape.gather_rows(g.sdf_end, Arc::new(f.idx_i.clone()));
            let sdf_n = tape.gather_rows(g.sdf_end, Arc::new(idx_next));
            let t_i_c = tape.constant(Tensor::new(vec![k, 1], f.t_i.clone()));
            let dt_c = tape.constant(Tensor::new(vec![k, 1], f.dt.clone()));
            let den = tape.sub(sdf_i, sdf_n);
            let tstar = tape.add(t_i_c, tape.mul(tape.mul(sdf_i, dt_c), tape.recip(den)));
            let o_k = tape.gather_rows(origins, Arc::new(f.valid_rows.clone()));
            let v_k = tape.gather_rows(dirs, Arc::new(f.valid_rows.clone()));
            let x_star = tape.add(o_k, tape.mul(v_k, tstar));
            let groups: Vec<FeatureSourceGroup<f64>> = f
                .source_groups
                .iter()
                .map(|(src, rows)| {
                    let (r_node, t_node) = *view_nodes.entry(*src).or_insert_with(|| {
                        let g = self.model.pose.eval_graph(&tape, &binding, *src);
                        (g.r, g.t)
                    });
                    FeatureSourceGroup {
                        rows: rows.clone(),
                        pose_r: r_node,
                        pose_t: t_node,
                        grid: self.maps[*src].to_sample_grid(),
                    }
                })
                .collect();
            feature_loss(
                &tape,
                x_star,
                &f.ref_feats,
                &groups,
                &self.dataset.intrinsics,
                2,
                Some(&f.feature_plan),
            )
            .loss
        };

        let node = match term {
            LossTerm::Rgb => l_rgb,
            LossTerm::Eikonal => l_eik,
            LossTerm::Mask => l_mask,
            LossTerm::Feature => l_feature,
            LossTerm::Depth => l_depth,
            LossTerm::Total => {
                total_loss(
                    &tape,
                    l_rgb,
                    l_eik,
                    Some(l_mask),
                    Some(l_feature),
                    Some(l_depth),
                    &LossWeights::default(),
                    0,
                )
                .total
            }
        };
        (tape, binding, node)
    }
}

pub fn check_loss_term(term: LossTerm, n_seeds: usize) -> CheckOutcome {
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let mut skipped = 0usize;
    for seed in 0..n_seeds as u64 {
        let mut probe = LossProbe::new(seed);
        let (tape, binding, node) = probe.forward(term);
        tape.backward(node);
        let analytic_grads: Vec<Option<Tensor<f64>>> = probe
            .model
            .params
            .iter()
            .map(|(id, _)| tape.grad(binding.leaf(id)))
            .collect();
        drop(tape);

        // sample coordinates across every parameter group
        let mut rng = seeded(seed ^ 0xC0DE, Stream::BatchSampling);
        let mut coords: Vec<(ParamId, usize)> = Vec::new();
        let ids: Vec<(ParamId, String, usize)> = probe
            .model
            .params
            .iter()
            .map(|(id, p)| (id, p.name.clone(), p.value.numel()))
            .collect();
        for want in [
            "sdf_mlp/layer0/weight",
            "sdf_mlp/head/weight",
            "color_mlp/layer0/weight",
            "pose_mlp/layer2/weight",
            "undistort/alpha",
            "undistort/beta",
            "deviation/raw",
        ] {
            if let Some((id, _, n)) = ids.iter().find(|(_, name, _)| name == want) {
                coords.push((*id, rng.gen_range(0..*n)));
                if *n > 4 {
                    coords.push((*id, rng.gen_range(0..*n)));
                }
            }
        }

        for (id, ci) in coords {
            let analytic = analytic_grads[id.0]
                .as_ref()
                .map(|g| g.data()[ci])
                .unwrap_or(0.0);
            let base = probe.model.params.get(id).value.data()[ci];
            let eval_at = |v: f64, probe: &mut LossProbe| -> f64 {
                probe.model.params.get_mut(id).value.data_mut()[ci] = v;
                let (tape, _, node) = probe.forward(term);
                let out = tape.item(node);
                probe.model.params.get_mut(id).value.data_mut()[ci] = base;
                out
            };
            let eps = fd::FD_EPS;
            let fd_full =
                (eval_at(base + eps, &mut probe) - eval_at(base - eps, &mut probe)) / (2.0 * eps);
            let fd_half = (eval_at(base + eps / 2.0, &mut probe)
                - eval_at(base - eps / 2.0, &mut probe))
                / eps;
            // kink straddled inside the probe: the central difference has not
            // converged, so there is no derivative to compare
            let fd_scale = fd_full.abs().max(fd_half.abs()).max(1e-6);
            if (fd_full - fd_half).abs() / fd_scale > 1e-3 {
                skipped += 1;
                continue;
            }
            // Richardson extrapolation of the two probe widths cancels the
            // eps^2 truncation term, which otherwise dominates the 1e-4
            // budget on pose paths through high-frequency encodings
            let fd_rich = (4.0 * fd_half - fd_full) / 3.0;
            checked += 1;
            let err = fd::rel_err(fd_rich, analytic, 1e-6);
            let sanity = fd::rel_err(fd_full, analytic, 1e-6);
            if err > worst {
                worst = err;
            }
            if err > fd::FD_REL_TOL || sanity > 1e-2 {
                return CheckOutcome {
                    name: term.name().into(),
                    seeds: n_seeds,
                    coords_checked: checked,
                    coords_skipped_nonsmooth: skipped,
                    worst_rel_err: worst,
                    failure: Some(format!(
                        "seed {seed}, parameter {} coord {ci}: analytic {analytic} vs central difference {fd_rich} (rel {err:.2e}, plain-fd rel {sanity:.2e})",
                        probe.model.params.get(id).name
                    )),
                };
            }
        }
    }
    CheckOutcome {
        name: term.name().into(),
        seeds: n_seeds,
        coords_checked: checked,
        coords_skipped_nonsmooth: skipped,
        worst_rel_err: worst,
        failure: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitives_pass_small_sweep() {
        let mut worst = 0.0;
        for seed in 0..5 {
            check_primitives(seed, &mut worst).unwrap();
        }
        assert!(worst < fd::FD_REL_TOL);
    }

    #[test]
    fn loss_terms_pass_small_sweep() {
        for term in [
            LossTerm::Rgb,
            LossTerm::Eikonal,
            LossTerm::Mask,
            LossTerm::Feature,
            LossTerm::Depth,
            LossTerm::Total,
        ] {
            let outcome = check_loss_term(term, 2);
            assert!(
                outcome.passed(),
                "{}: {}",
                outcome.name,
                outcome.failure.unwrap()
            );
            assert!(outcome.coords_checked > 0, "{} checked nothing", outcome.name);
        }
    }
}
