//! Joint optimization loop: ray batching, the per-step differentiable
//! pipeline (poses -> rays -> sampling -> volume rendering -> losses),
//! ADAM updates over all parameter groups, schedules, checkpoints, logs.

mod adam;
mod config;

pub use adam::{AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use config::{Dtype, GroupLr, TrainConfig};

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{checkpoint, Binding, Tape, Tensor, Value};
use crate::cameras::{normalize3, pixel_camera_dir, ray_sphere_range, Pose};
use crate::encoding::schedule_level;
use crate::features::{nearest_source_views, FeatureBank, FeatureMap};
use crate::losses::{
    self, depth_loss, eikonal_loss, mask_loss, rgb_loss, total_loss, FeatureSourceGroup,
    LossReport,
};
use crate::networks::{Model, ParamGroup, PoseMode};
use crate::num::Real;
use crate::rendering::{build_render_graph, sample_rays_batch, surface_crossing};
use crate::rngs::{seeded_step, Stream};
use crate::scenes::{perturb_poses, PoseRecord, SceneDataset};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training halted after {0} consecutive non-finite steps")]
    NumericalFailure(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] checkpoint::CheckpointError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// A sampled training ray (bookkeeping only; graph values are built per
/// step).
struct BatchRay {
    view: usize,
    pixel: (usize, usize),
    target_rgb: [f64; 3],
    mask: bool,
    /// Distorted (monocular-style) depth at the pixel; < 0 marks missing.
    dbar: f64,
}

pub struct Trainer<T: Real> {
    pub model: Model<T>,
    pub dataset: SceneDataset,
    pub config: TrainConfig,
    pub adam: AdamState<T>,
    pub step: usize,
    feature_maps: Vec<FeatureMap>,
    source_views: Vec<Vec<usize>>,
    /// Per-view list of mask-interior pixel indices.
    interior: Vec<Vec<usize>>,
    consecutive_aborts: usize,
}

impl<T: Real> Trainer<T> {
    pub fn new(config: TrainConfig, dataset: SceneDataset) -> Result<Self, TrainError> {
        config.validate().map_err(TrainError::Config)?;
        let n_views = dataset.meta.views;
        let gt = dataset.gt_poses();
        let initial_poses = match config.pose_mode {
            PoseMode::FrozenGt => gt.clone(),
            PoseMode::Absolute => vec![Pose::identity(); n_views],
            PoseMode::Delta => {
                if config.pose_init_noise_rot > 0.0 || config.pose_init_noise_trans > 0.0 {
                    perturb_poses(
                        &gt,
                        config.pose_init_noise_rot,
                        config.pose_init_noise_trans,
                        config.seed,
                    )
                } else {
                    gt.clone()
                }
            }
        };
        let model = Model::new(
            &config.network,
            n_views,
            config.pose_mode,
            initial_poses,
            config.seed,
        );
        let adam = AdamState::new(&model.params);

        let bank = FeatureBank::new(config.seed);
        let feature_maps: Vec<FeatureMap> = dataset
            .views
            .iter()
            .map(|v| bank.extract(&v.image, dataset.meta.width, dataset.meta.height))
            .collect();

        let interior = dataset
            .views
            .iter()
            .map(|v| {
                v.mask
                    .iter()
                    .enumerate()
                    .filter(|(_, &m)| m)
                    .map(|(i, _)| i)
                    .collect::<Vec<usize>>()
            })
            .collect::<Vec<_>>();

        let mut trainer = Trainer {
            model,
            dataset,
            config,
            adam,
            step: 0,
            feature_maps,
            source_views: Vec::new(),
            interior,
            consecutive_aborts: 0,
        };
        trainer.refresh_source_views();
        Ok(trainer)
    }

    /// Consume the trainer, keeping only the model (checkpoint loaders).
    pub fn into_model(self) -> Model<T> {
        self.model
    }

    /// Current pose values (no grad) for every view.
    pub fn current_poses(&self) -> Vec<Pose> {
        match self.config.pose_mode {
            PoseMode::FrozenGt => self.dataset.gt_poses(),
            _ => (0..self.dataset.meta.views)
                .map(|v| self.model.pose.eval_pose(&self.model.params, v))
                .collect(),
        }
    }

    /// Reselect each view's nearest source views under current poses.
    fn refresh_source_views(&mut self) {
        let centers: Vec<[f64; 3]> = self.current_poses().iter().map(|p| p.center()).collect();
        self.source_views = (0..centers.len())
            .map(|v| nearest_source_views(&centers, v, self.config.n_source_views))
            .collect();
    }

    /// Draw the ray batch: half constrained to mask-interior pixels, the
    /// rest uniform over (view, pixel).
    fn sample_batch(&self, step: usize) -> Vec<BatchRay> {
        let mut rng = seeded_step(self.config.seed, Stream::BatchSampling, step as u64);
        let ds = &self.dataset;
        let npix = ds.meta.width * ds.meta.height;
        let n = self.config.rays_per_batch;
        let n_interior = ((n as f64) * self.config.mask_interior_fraction).round() as usize;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let (view, pixel) = if i < n_interior {
                // uniform over views with a non-empty interior, then pixels
                let view = loop {
                    let v = rng.gen_range(0..ds.meta.views);
                    if !self.interior[v].is_empty() {
                        break v;
                    }
                };
                let pix = self.interior[view][rng.gen_range(0..self.interior[view].len())];
                (view, pix)
            } else {
                (rng.gen_range(0..ds.meta.views), rng.gen_range(0..npix))
            };
            let v = &ds.views[view];
            out.push(BatchRay {
                view,
                pixel: (pixel / ds.meta.width, pixel % ds.meta.width),
                target_rgb: v.image[pixel],
                mask: v.mask[pixel],
                dbar: v.depth[pixel],
            });
        }
        out
    }

    /// One optimization step. Returns the loss report; a non-finite forward
    /// or backward aborts the step without touching parameters.
    pub fn train_step(&mut self, step: usize) -> Result<LossReport, TrainError> {
        match self.step_inner(step) {
            Some(report) => {
                self.consecutive_aborts = 0;
                Ok(report)
            }
            None => {
                self.model.params.clear_grads();
                self.consecutive_aborts += 1;
                eprintln!("step {step}: non-finite loss or gradients; step aborted");
                if self.consecutive_aborts >= 3 {
                    return Err(TrainError::NumericalFailure(self.consecutive_aborts));
                }
                Ok(LossReport {
                    total: f64::NAN,
                    ..Default::default()
                })
            }
        }
    }

    fn step_inner(&mut self, step: usize) -> Option<LossReport> {
        let prof = std::env::var_os("SURFREC_STEP_PROF").is_some();
        let mut t_phase = std::time::Instant::now();
        let mut mark = move |label: &str| {
            if prof {
                eprintln!("  phase {label}: {:.1} ms", t_phase.elapsed().as_secs_f64() * 1e3);
            }
            t_phase = std::time::Instant::now();
        };
        if step > 0 && self.config.source_view_refresh > 0 && step % self.config.source_view_refresh == 0 {
            self.refresh_source_views();
        }
        let cfg = &self.config;
        let ds = &self.dataset;
        let level_pos = schedule_level(step, cfg.total_steps, cfg.encoding.num_freqs_position, &cfg.encoding);
        let level_dir = schedule_level(step, cfg.total_steps, cfg.encoding.num_freqs_direction, &cfg.encoding);

        // ---- batch assembly (values only) --------------------------------
        let mut batch = self.sample_batch(step);
        // group rays by view for per-view pose nodes
        batch.sort_by_key(|r| r.view);
        let poses = self.current_poses();
        let radius = ds.meta.bounding_radius;

        // value-level rays for near/far and importance sampling
        let mut kept: Vec<(BatchRay, [f64; 3], [f64; 3], (f64, f64))> = Vec::with_capacity(batch.len());
        for ray in batch {
            let pose = &poses[ray.view];
            let d_cam = pixel_camera_dir(ray.pixel.0, ray.pixel.1, &ds.intrinsics);
            let dir = normalize3(crate::cameras::mat_t_vec(&pose.r, d_cam));
            let origin = pose.center();
            if let Some(range) = ray_sphere_range(origin, dir, radius) {
                kept.push((ray, origin, dir, range));
            }
        }
        if kept.is_empty() {
            return Some(LossReport::default());
        }
        let n_rays = kept.len();
        let sections = cfg.sampling.n_sections();

        let origins_f: Vec<[f64; 3]> = kept.iter().map(|k| k.1).collect();
        let dirs_f: Vec<[f64; 3]> = kept.iter().map(|k| k.2).collect();
        let ranges: Vec<(f64, f64)> = kept.iter().map(|k| k.3).collect();
        let mut srng = seeded_step(cfg.seed, Stream::RaySampling, step as u64);
        let sampling = cfg.sampling;
        let t_rows = {
            let model = &self.model;
            let mut sdf_fn = |pts: &[f64]| -> Vec<f64> {
                let p: Vec<T> = pts.iter().map(|&v| T::from_f64(v)).collect();
                model
                    .sdf
                    .sdf_values(&model.params, &p, level_pos)
                    .into_iter()
                    .map(|v| v.to_f64())
                    .collect()
            };
            sample_rays_batch(&origins_f, &dirs_f, &ranges, &mut sdf_fn, &sampling, &mut srng)
        };
        let mut t_flat = Vec::with_capacity(n_rays * (sections + 1));
        for row in &t_rows {
            t_flat.extend_from_slice(row);
        }
        mark("sampling");

        // ---- differentiable forward --------------------------------------
        let tape = Tape::<T>::new();
        let binding = Binding::bind_all(&tape, &self.model.params);

        // per-view pose nodes and per-ray origin/dir nodes
        let distinct_views: Vec<usize> = {
            let mut v: Vec<usize> = kept.iter().map(|k| k.0.view).collect();
            v.dedup();
            v
        };
        let mut view_pose_nodes: std::collections::BTreeMap<usize, (Value, Value)> =
            std::collections::BTreeMap::new();
        for &view in &distinct_views {
            view_pose_nodes.insert(view, self.pose_node(&tape, &binding, view));
        }
        let mut origin_blocks = Vec::new();
        let mut dir_blocks = Vec::new();
        let mut i = 0;
        while i < n_rays {
            let view = kept[i].0.view;
            let mut j = i;
            while j < n_rays && kept[j].0.view == view {
                j += 1;
            }
            let (r_node, t_node) = view_pose_nodes[&view];
            // o = -R^T t (row form: -(t R)); v = normalize(d_cam R)
            let o_row = tape.neg(tape.matmul(t_node, r_node));
            let d_cam: Vec<T> = kept[i..j]
                .iter()
                .flat_map(|k| {
                    let d = pixel_camera_dir(k.0.pixel.0, k.0.pixel.1, &ds.intrinsics);
                    [T::from_f64(d[0]), T::from_f64(d[1]), T::from_f64(d[2])]
                })
                .collect();
            let d_cam = tape.constant(Tensor::new(vec![j - i, 3], d_cam));
            let v_world = tape.matmul(d_cam, r_node);
            let inv_norm = tape.recip(tape.norm2_rows(v_world));
            dir_blocks.push(tape.mul(v_world, inv_norm));
            origin_blocks.push(tape.tile_rows(o_row, j - i));
            i = j;
        }
        let origins = if origin_blocks.len() == 1 {
            origin_blocks[0]
        } else {
            tape.concat_rows(&origin_blocks)
        };
        let dirs = if dir_blocks.len() == 1 {
            dir_blocks[0]
        } else {
            tape.concat_rows(&dir_blocks)
        };

        let graph = build_render_graph(
            &tape,
            &binding,
            &self.model,
            origins,
            dirs,
            &t_flat,
            n_rays,
            sections,
            level_pos,
            level_dir,
        );
        mark("forward graph");

        // ---- losses -------------------------------------------------------
        let targets = tape.constant(Tensor::new(
            vec![n_rays, 3],
            kept.iter()
                .flat_map(|k| k.0.target_rgb.iter().map(|&c| T::from_f64(c)).collect::<Vec<_>>())
                .collect(),
        ));
        let l_rgb = rgb_loss(&tape, graph.rgb, targets);
        let l_eik = eikonal_loss(&tape, graph.normals_mid);
        let masks = tape.constant(Tensor::new(
            vec![n_rays, 1],
            kept.iter()
                .map(|k| if k.0.mask { T::ONE } else { T::ZERO })
                .collect(),
        ));
        let l_mask = mask_loss(&tape, graph.opacity, masks);

        let aux_on = step >= cfg.feature_depth_warmup;

        // depth term: rays with valid monocular depth (and optionally
        // mask-interior)
        let l_depth = if cfg.loss_weights.depth > 0.0 && aux_on {
            let rows: Vec<usize> = kept
                .iter()
                .enumerate()
                .filter(|(_, k)| k.0.dbar > 0.0 && (!cfg.depth_loss_interior_only || k.0.mask))
                .map(|(i, _)| i)
                .collect();
            if rows.is_empty() {
                None
            } else {
                let dbar = tape.constant(Tensor::new(
                    vec![rows.len(), 1],
                    rows.iter().map(|&i| T::from_f64(kept[i].0.dbar)).collect(),
                ));
                let view_ids: Vec<usize> = rows.iter().map(|&i| kept[i].0.view).collect();
                let d_sel = tape.gather_rows(graph.depth, Arc::new(rows));
                let a_sel = tape.gather_rows(
                    binding.leaf(self.model.undistort.alpha),
                    Arc::new(view_ids.clone()),
                );
                let b_sel = tape.gather_rows(binding.leaf(self.model.undistort.beta), Arc::new(view_ids));
                Some(depth_loss(&tape, d_sel, dbar, a_sel, b_sel))
            }
        } else {
            None
        };

        // feature term: surface points from endpoint sdf zero-crossings
        let mut feature_skipped = 0usize;
        let l_feature = if cfg.loss_weights.feature > 0.0 && aux_on {
            let sdf_vals = tape.value(graph.sdf_end);
            let mut valid_rows = Vec::new(); // ray index
            let mut idx_i = Vec::new(); // global row of sdf_i
            let mut t_i = Vec::new();
            let mut dt = Vec::new();
            for r in 0..n_rays {
                let row = &t_flat[r * (sections + 1)..(r + 1) * (sections + 1)];
                let svals: Vec<f64> = (0..sections + 1)
                    .map(|k| sdf_vals.data()[r * (sections + 1) + k].to_f64())
                    .collect();
                match surface_crossing(row, &svals) {
                    Some((i, _)) => {
                        valid_rows.push(r);
                        idx_i.push(r * (sections + 1) + i);
                        t_i.push(row[i]);
                        dt.push(row[i + 1] - row[i]);
                    }
                    None => feature_skipped += 1,
                }
            }
            if valid_rows.is_empty() {
                None
            } else {
                let k = valid_rows.len();
                let idx_next: Vec<usize> = idx_i.iter().map(|&i| i + 1).collect();
                let sdf_i = tape.gather_rows(graph.sdf_end, Arc::new(idx_i));
                let sdf_n = tape.gather_rows(graph.sdf_end, Arc::new(idx_next));
                let t_i_c = tape.constant(Tensor::new(
                    vec![k, 1],
                    t_i.into_iter().map(T::from_f64).collect(),
                ));
                let dt_c = tape.constant(Tensor::new(
                    vec![k, 1],
                    dt.into_iter().map(T::from_f64).collect(),
                ));
                let den = tape.sub(sdf_i, sdf_n);
                let tstar = tape.add(t_i_c, tape.mul(tape.mul(sdf_i, dt_c), tape.recip(den)));
                let o_k = tape.gather_rows(origins, Arc::new(valid_rows.clone()));
                let v_k = tape.gather_rows(dirs, Arc::new(valid_rows.clone()));
                let x_star = tape.add(o_k, tape.mul(v_k, tstar));

                // reference features at the ray pixels (constants)
                let nc = crate::features::FEATURE_CHANNELS;
                let mut ref_rows = Vec::with_capacity(k * nc);
                for &r in &valid_rows {
                    let (row, col) = kept[r].0.pixel;
                    let u = FeatureMap::pixel_to_cell(col as f64 + 0.5);
                    let v = FeatureMap::pixel_to_cell(row as f64 + 0.5);
                    let f = self.feature_maps[kept[r].0.view].sample(u, v);
                    ref_rows.extend(f.into_iter().map(T::from_f64));
                }
                let ref_feats = Tensor::new(vec![k, nc], ref_rows);

                // group surface points by source view
                let mut groups: std::collections::BTreeMap<usize, Vec<usize>> =
                    std::collections::BTreeMap::new();
                for (ki, &r) in valid_rows.iter().enumerate() {
                    for &src in &self.source_views[kept[r].0.view] {
                        groups.entry(src).or_default().push(ki);
                    }
                }
                let groups: Vec<FeatureSourceGroup<T>> = groups
                    .into_iter()
                    .map(|(src, rows)| {
                        let (r_node, t_node) = *view_pose_nodes.entry(src).or_insert_with(|| {
                            self.pose_node(&tape, &binding, src)
                        });
                        FeatureSourceGroup {
                            rows,
                            pose_r: r_node,
                            pose_t: t_node,
                            grid: self.feature_maps[src].to_sample_grid::<T>(),
                        }
                    })
                    .collect();
                let res = losses::feature_loss(
                    &tape,
                    x_star,
                    &ref_feats,
                    &groups,
                    &ds.intrinsics,
                    cfg.n_source_views,
                    None,
                );
                feature_skipped += res.skipped_rays;
                Some(res.loss)
            }
        } else {
            None
        };

        let tl = total_loss(
            &tape,
            l_rgb,
            l_eik,
            Some(l_mask),
            l_feature,
            l_depth,
            &cfg.loss_weights,
            feature_skipped,
        );
        if !tl.report.total.is_finite() {
            return None;
        }
        mark("losses");

        // ---- backward + update ---------------------------------------------
        tape.backward(tl.total);
        mark("backward");
        binding.accumulate_grads(&tape, &mut self.model.params);
        for (_, p) in self.model.params.iter() {
            if !p.grad.is_all_finite() {
                return None;
            }
        }

        let warm = if cfg.warmup_steps > 0 {
            ((step + 1) as f64 / cfg.warmup_steps as f64).min(1.0)
        } else {
            1.0
        };
        let base_lr = cfg.learning_rate * warm;
        let geom_warm = if cfg.geometry_warmup_steps > 0 {
            (step as f64 / cfg.geometry_warmup_steps as f64).min(1.0)
        } else {
            1.0
        };
        let frozen_poses = cfg.pose_mode == PoseMode::FrozenGt;
        let group_lr = cfg.group_lr;
        self.adam.update(&mut self.model.params, |_, name| {
            let mult = match Model::<T>::group_of(name) {
                ParamGroup::SdfNet => group_lr.sdf * geom_warm,
                ParamGroup::ColorNet => group_lr.color,
                ParamGroup::PoseNet => {
                    if frozen_poses {
                        0.0
                    } else {
                        group_lr.pose
                    }
                }
                ParamGroup::Undistortion => group_lr.undistort,
                ParamGroup::Deviation => group_lr.deviation * geom_warm,
            };
            base_lr * mult
        });
        self.model.params.clear_grads();
        mark("update");
        Some(tl.report)
    }

    fn pose_node(&self, tape: &Tape<T>, binding: &Binding, view: usize) -> (Value, Value) {
        match self.config.pose_mode {
            PoseMode::FrozenGt => {
                let p = &self.dataset.views[view].pose_gt;
                let r: Vec<T> = p.r.iter().flatten().map(|&v| T::from_f64(v)).collect();
                let t: Vec<T> = p.t.iter().map(|&v| T::from_f64(v)).collect();
                (
                    tape.constant(Tensor::new(vec![3, 3], r)),
                    tape.constant(Tensor::new(vec![1, 3], t)),
                )
            }
            _ => {
                let g = self.model.pose.eval_graph(tape, binding, view);
                (g.r, g.t)
            }
        }
    }

    /// Mean absolute gradient over all parameters (diagnostics; call before
    /// grads are cleared).
    pub fn mean_abs_grad(&self) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (_, p) in self.model.params.iter() {
            for g in p.grad.data() {
                sum += g.to_f64().abs();
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    pub fn save_checkpoint(&self, dir: &Path, tag: &str) -> Result<(), TrainError> {
        std::fs::create_dir_all(dir)?;
        checkpoint::save(&self.model.params, &dir.join(format!("{tag}.ckpt")))?;
        self.adam
            .save(&self.model.params, &dir.join(format!("{tag}.adam")))?;
        crate::scenes::write_json(
            &dir.join(format!("{tag}.state.json")),
            &serde_json::json!({ "step": self.step }),
        )
        .map_err(|e| TrainError::Io(std::io::Error::other(e.to_string())))?;
        Ok(())
    }

    pub fn restore_checkpoint(&mut self, dir: &Path, tag: &str) -> Result<(), TrainError> {
        checkpoint::load_into(&mut self.model.params, &dir.join(format!("{tag}.ckpt")))?;
        let state: serde_json::Value = crate::scenes::read_json(&dir.join(format!("{tag}.state.json")))
            .map_err(|e| TrainError::Io(std::io::Error::other(e.to_string())))?;
        let step = state["step"].as_u64().unwrap_or(0) as usize;
        self.adam
            .load(&self.model.params, &dir.join(format!("{tag}.adam")), step)?;
        self.step = step;
        self.refresh_source_views();
        Ok(())
    }

    /// Export current poses in the pose-file format.
    pub fn export_poses(&self, path: &Path) -> Result<(), TrainError> {
        let records: Vec<PoseRecord> = self
            .current_poses()
            .iter()
            .enumerate()
            .map(|(i, p)| PoseRecord::from_pose(i, p))
            .collect();
        crate::scenes::write_json(path, &records)
            .map_err(|e| TrainError::Io(std::io::Error::other(e.to_string())))
    }

    /// Full training run: CSV log (one row per step), periodic + final
    /// checkpoints, final pose export. Returns (first, last) loss reports.
    pub fn run(&mut self, out_dir: &Path) -> Result<(LossReport, LossReport), TrainError> {
        std::fs::create_dir_all(out_dir)?;
        let mut log = std::io::BufWriter::new(std::fs::File::create(out_dir.join("train_log.csv"))?);
        writeln!(
            log,
            "step,rgb,eikonal,mask,feature,depth,total,level,s,mean_abs_grad"
        )?;
        let mut first: Option<LossReport> = None;
        let mut last = LossReport::default();
        let total = self.config.total_steps;
        for step in self.step..total {
            let report = self.train_step(step)?;
            let level = schedule_level(
                step,
                total,
                self.config.encoding.num_freqs_position,
                &self.config.encoding,
            );
            let s = self.model.deviation.s_value(&self.model.params);
            writeln!(
                log,
                "{step},{},{},{},{},{},{},{level},{s},{}",
                report.rgb,
                report.eikonal,
                report.mask,
                report.feature,
                report.depth,
                report.total,
                self.mean_abs_grad()
            )?;
            if first.is_none() {
                first = Some(report);
            }
            last = report;
            self.step = step + 1;
            if self.config.checkpoint_every > 0 && (step + 1) % self.config.checkpoint_every == 0 {
                self.save_checkpoint(out_dir, &format!("step_{:06}", step + 1))?;
            }
        }
        log.flush()?;
        self.save_checkpoint(out_dir, "final")?;
        self.export_poses(&out_dir.join("poses_est.json"))?;
        Ok((first.unwrap_or_default(), last))
    }
}
