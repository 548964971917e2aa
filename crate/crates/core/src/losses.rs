//! The five training loss terms and their weighted total:
//! L = L_rgb + l1 L_eikonal + l2 L_mask + l3 L_feature + l4 L_depth.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{SampleGrid, Tape, Tensor, Value};
use crate::cameras::Intrinsics;
use crate::features::FeatureMap;
use crate::num::Real;

/// Loss term weights (lambda_1..lambda_4).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub eikonal: f64,
    pub mask: f64,
    pub feature: f64,
    pub depth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            eikonal: 0.1,
            mask: 0.1,
            feature: 0.5,
            depth: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("eikonal", self.eikonal),
            ("mask", self.mask),
            ("feature", self.feature),
            ("depth", self.depth),
        ] {
            if v < 0.0 {
                return Err(format!("loss weight {name} must be >= 0, got {v}"));
            }
        }
        Ok(())
    }
}

/// Per-step record of each term and the weighted total.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub rgb: f64,
    pub eikonal: f64,
    pub mask: f64,
    pub feature: f64,
    pub depth: f64,
    pub total: f64,
    /// Rays whose feature term contributed nothing (no valid surface point
    /// or all projections rejected).
    pub feature_skipped_rays: usize,
}

/// Ray-averaged channel-summed L1 between rendered and target colors.
/// rendered [r,3] (graph), target [r,3] (constant). Empty batches are a
/// caller bug.
pub fn rgb_loss<T: Real>(tape: &Tape<T>, rendered: Value, target: Value) -> Value {
    let r = tape.value(rendered).rows_cols().0;
    assert!(r > 0, "rgb_loss on an empty batch");
    let diff = tape.abs(tape.sub(rendered, target));
    tape.scale(tape.sum_all(diff), T::from_f64(1.0 / r as f64))
}

/// mean((|grad f| - 1)^2) over sampled points; gradients [n,3].
pub fn eikonal_loss<T: Real>(tape: &Tape<T>, gradients: Value) -> Value {
    let norms = tape.norm2_rows(gradients);
    let dev = tape.add_scalar(norms, -T::ONE);
    tape.mean_all(tape.mul(dev, dev))
}

pub const MASK_CLAMP_EPS: f64 = 1e-5;

/// Binary cross entropy between clamped opacity and the {0,1} mask.
pub fn mask_loss<T: Real>(tape: &Tape<T>, opacity: Value, mask: Value) -> Value {
    let eps = T::from_f64(MASK_CLAMP_EPS);
    let one_minus_eps = T::from_f64(1.0 - MASK_CLAMP_EPS);
    let lo = tape.maximum(opacity, tape.constant(Tensor::scalar(eps)));
    // min(x, 1-eps) = -max(-x, -(1-eps))
    let clamped = tape.neg(tape.maximum(
        tape.neg(lo),
        tape.constant(Tensor::scalar(-one_minus_eps)),
    ));
    let one_minus_o = tape.add_scalar(tape.neg(clamped), T::ONE);
    let one_minus_m = tape.add_scalar(tape.neg(mask), T::ONE);
    let ll = tape.add(
        tape.mul(mask, tape.ln(clamped)),
        tape.mul(one_minus_m, tape.ln(one_minus_o)),
    );
    tape.neg(tape.mean_all(ll))
}

/// L1 between rendered depth and the per-view undistorted target
/// alpha * dbar + beta, averaged over the contributing rays. All inputs are
/// [k,1] (alpha/beta already gathered per ray).
pub fn depth_loss<T: Real>(
    tape: &Tape<T>,
    rendered_depth: Value,
    dbar: Value,
    alpha: Value,
    beta: Value,
) -> Value {
    let target = tape.add(tape.mul(alpha, dbar), beta);
    tape.mean_all(tape.abs(tape.sub(rendered_depth, target)))
}

/// One source view's share of the feature-consistency batch: which surface
/// points project into it, under which (differentiable) pose, against which
/// feature grid.
pub struct FeatureSourceGroup<T: Real> {
    /// Row indices into the surface-point batch.
    pub rows: Vec<usize>,
    /// Source pose rotation [3,3] on the tape (world->camera).
    pub pose_r: Value,
    /// Source pose translation [1,3] on the tape.
    pub pose_t: Value,
    pub grid: Arc<SampleGrid<T>>,
}

pub struct FeatureLossResult {
    pub loss: Value,
    /// Rays (surface points) with at least one contributing projection.
    pub contributing_rays: usize,
    /// Surface points whose every projection was rejected, plus rays that
    /// never had a surface point (added by the caller).
    pub skipped_rays: usize,
    /// Per-group surviving (local index, surface-point row) selections;
    /// reusable as a frozen plan.
    pub plans: Vec<Vec<(usize, usize)>>,
}

/// Multi-view feature consistency: (1/(N_c N_s)) sum_i |F_0(p_0) -
/// F_i(project(x'))|, averaged over contributing rays. Projections behind
/// the camera or outside the interpolation square are skipped (decided on
/// values; gradients follow the surviving branch). A `frozen_plan` (from a
/// previous result) replays earlier selections instead of re-deciding, which
/// keeps the function smooth for finite-difference checks.
pub fn feature_loss<T: Real>(
    tape: &Tape<T>,
    surface_points: Value,
    ref_feats: &Tensor<T>,
    groups: &[FeatureSourceGroup<T>],
    intrinsics: &Intrinsics,
    n_sources: usize,
    frozen_plan: Option<&[Vec<(usize, usize)>]>,
) -> FeatureLossResult {
    let k_total = tape.value(surface_points).rows_cols().0;
    let n_c = ref_feats.rows_cols().1;
    let mut term_sum: Option<Value> = None;
    let mut contributes = vec![false; k_total];
    let mut plans = Vec::with_capacity(groups.len());

    for (gi, group) in groups.iter().enumerate() {
        if group.rows.is_empty() {
            plans.push(Vec::new());
            continue;
        }
        let pts = tape.gather_rows(surface_points, Arc::new(group.rows.clone()));
        // camera frame: x_cam = R x + t (row form: x R^T + t)
        let cam = tape.add(
            tape.matmul(pts, tape.transpose(group.pose_r)),
            group.pose_t,
        );
        let (fx, fy, cx, cy) = (
            intrinsics.fx,
            intrinsics.fy,
            intrinsics.cx,
            intrinsics.cy,
        );
        let stride = crate::features::FEATURE_STRIDE as f64;
        let half = 0.5;
        let keep: Vec<(usize, usize)> = if let Some(plan) = frozen_plan {
            plan[gi].clone()
        } else {
            // keep rows in front of the camera and inside the sampling square
            let cam_vals = tape.value(cam);
            let wc = group.grid.width as f64 - 1.0;
            let hc = group.grid.height as f64 - 1.0;
            let mut keep = Vec::new();
            for (i, &row) in group.rows.iter().enumerate() {
                let z = cam_vals.row(i)[2].to_f64();
                if z <= 1e-6 {
                    continue;
                }
                let px = fx * cam_vals.row(i)[0].to_f64() / z + cx;
                let py = fy * cam_vals.row(i)[1].to_f64() / z + cy;
                let u = (px - half) / stride;
                let v = (py - half) / stride;
                if u >= 0.0 && v >= 0.0 && u <= wc && v <= hc {
                    keep.push((i, row));
                }
            }
            keep
        };
        plans.push(keep.clone());
        if keep.is_empty() {
            continue;
        }
        let keep_local: Vec<usize> = keep.iter().map(|&(i, _)| i).collect();
        let cam_sel = tape.gather_rows(cam, Arc::new(keep_local));
        let x = tape.slice_cols(cam_sel, 0, 1);
        let y = tape.slice_cols(cam_sel, 1, 2);
        let z = tape.slice_cols(cam_sel, 2, 3);
        let inv_z = tape.recip(z);
        let px = tape.add_scalar(tape.scale(tape.mul(x, inv_z), T::from_f64(fx)), T::from_f64(cx));
        let py = tape.add_scalar(tape.scale(tape.mul(y, inv_z), T::from_f64(fy)), T::from_f64(cy));
        let u = tape.scale(tape.add_scalar(px, T::from_f64(-half)), T::from_f64(1.0 / stride));
        let v = tape.scale(tape.add_scalar(py, T::from_f64(-half)), T::from_f64(1.0 / stride));
        let uv = tape.concat_cols(&[u, v]);
        let feats = tape.bilinear_sample(uv, group.grid.clone());

        // matching reference features as constants
        let mut ref_rows = Vec::with_capacity(keep.len() * n_c);
        for &(_, row) in &keep {
            ref_rows.extend_from_slice(ref_feats.row(row));
        }
        let ref_node = tape.constant(Tensor::new(vec![keep.len(), n_c], ref_rows));
        let l1 = tape.sum_all(tape.abs(tape.sub(feats, ref_node)));
        term_sum = Some(match term_sum {
            Some(acc) => tape.add(acc, l1),
            None => l1,
        });
        for &(_, row) in &keep {
            contributes[row] = true;
        }
    }

    let contributing_rays = contributes.iter().filter(|&&c| c).count();
    let skipped_rays = k_total - contributing_rays;
    let loss = match term_sum {
        Some(sum) if contributing_rays > 0 => tape.scale(
            sum,
            T::from_f64(1.0 / (n_c as f64 * n_sources as f64 * contributing_rays as f64)),
        ),
        _ => tape.constant(Tensor::scalar(T::ZERO)),
    };
    FeatureLossResult {
        loss,
        contributing_rays,
        skipped_rays,
        plans,
    }
}

/// Convenience: constant grid of a feature map.
pub fn feature_grid<T: Real>(map: &FeatureMap) -> Arc<SampleGrid<T>> {
    map.to_sample_grid()
}

/// Weighted total per the overall training objective.
pub struct TotalLoss {
    pub total: Value,
    pub report: LossReport,
}

pub fn total_loss<T: Real>(
    tape: &Tape<T>,
    rgb: Value,
    eikonal: Value,
    mask: Option<Value>,
    feature: Option<Value>,
    depth: Option<Value>,
    weights: &LossWeights,
    feature_skipped_rays: usize,
) -> TotalLoss {
    let mut total = rgb;
    total = tape.add(total, tape.scale(eikonal, T::from_f64(weights.eikonal)));
    if let Some(m) = mask {
        total = tape.add(total, tape.scale(m, T::from_f64(weights.mask)));
    }
    if let Some(f) = feature {
        total = tape.add(total, tape.scale(f, T::from_f64(weights.feature)));
    }
    if let Some(d) = depth {
        total = tape.add(total, tape.scale(d, T::from_f64(weights.depth)));
    }
    let report = LossReport {
        rgb: tape.item(rgb).to_f64(),
        eikonal: tape.item(eikonal).to_f64(),
        mask: mask.map_or(0.0, |m| tape.item(m).to_f64()),
        feature: feature.map_or(0.0, |f| tape.item(f).to_f64()),
        depth: depth.map_or(0.0, |d| tape.item(d).to_f64()),
        total: tape.item(total).to_f64(),
        feature_skipped_rays,
    };
    TotalLoss { total, report }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rngs::{seeded, Stream};
    use rand::Rng;

    fn tensor2<T: Real>(rows: usize, cols: usize, data: Vec<f64>) -> Tensor<T> {
        Tensor::new(vec![rows, cols], data.into_iter().map(T::from_f64).collect())
    }

    #[test]
    fn rgb_loss_examples() {
        let t = Tape::<f64>::new();
        // identical -> 0
        let a = t.constant(tensor2(3, 3, vec![0.2; 9]));
        let b = t.constant(tensor2(3, 3, vec![0.2; 9]));
        assert_eq!(t.item(rgb_loss(&t, a, b)), 0.0);
        // single ray, channel-summed L1
        let c = t.constant(tensor2(1, 3, vec![1.0, 1.0, 1.0]));
        let d = t.constant(tensor2(1, 3, vec![0.0, 0.0, 0.0]));
        assert_eq!(t.item(rgb_loss(&t, c, d)), 3.0);
    }

    #[test]
    fn rgb_loss_matches_scalar_loop_oracle_and_permutation_invariant() {
        let mut rng = seeded(1, Stream::BatchSampling);
        let n = 17;
        let a: Vec<f64> = (0..n * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..n * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
        // Oracle: elementwise reference loop.
        let mut want = 0.0;
        for j in 0..n {
            for c in 0..3 {
                want += (a[j * 3 + c] - b[j * 3 + c]).abs();
            }
        }
        want /= n as f64;
        let t = Tape::<f64>::new();
        let got = t.item(rgb_loss(
            &t,
            t.constant(tensor2(n, 3, a.clone())),
            t.constant(tensor2(n, 3, b.clone())),
        ));
        assert!((got - want).abs() < 1e-12);

        // permuted rays give the same mean
        let perm: Vec<usize> = (0..n).rev().collect();
        let ap: Vec<f64> = perm.iter().flat_map(|&j| a[j * 3..j * 3 + 3].to_vec()).collect();
        let bp: Vec<f64> = perm.iter().flat_map(|&j| b[j * 3..j * 3 + 3].to_vec()).collect();
        let got_p = t.item(rgb_loss(
            &t,
            t.constant(tensor2(n, 3, ap)),
            t.constant(tensor2(n, 3, bp)),
        ));
        assert!((got - got_p).abs() < 1e-12);
    }

    #[test]
    fn eikonal_examples() {
        let t = Tape::<f64>::new();
        // exact unit gradients -> 0
        let g = t.constant(tensor2(4, 3, vec![
            1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.577350269189626, 0.577350269189626,
            0.577350269189626,
        ]));
        assert!(t.item(eikonal_loss(&t, g)) < 1e-12);
        // all-zero gradients -> 1
        let z = t.constant(tensor2(5, 3, vec![0.0; 15]));
        assert_eq!(t.item(eikonal_loss(&t, z)), 1.0);
        // doubled sphere sdf: |grad| = 2 -> (2-1)^2 = 1
        let two = t.constant(tensor2(2, 3, vec![2.0, 0.0, 0.0, 0.0, 0.0, 2.0]));
        assert!((t.item(eikonal_loss(&t, two)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mask_loss_examples_and_oracle() {
        let t = Tape::<f64>::new();
        // opacity == mask -> ~0 after clamping
        let o = t.constant(tensor2(4, 1, vec![1.0, 0.0, 1.0, 0.0]));
        let m = t.constant(tensor2(4, 1, vec![1.0, 0.0, 1.0, 0.0]));
        let v = t.item(mask_loss(&t, o, m));
        assert!(v >= 0.0 && v <= 2e-5, "{v}");
        // opacity 0.5 everywhere -> ln 2
        let o5 = t.constant(tensor2(3, 1, vec![0.5; 3]));
        let m5 = t.constant(tensor2(3, 1, vec![1.0, 0.0, 1.0]));
        assert!((t.item(mask_loss(&t, o5, m5)) - std::f64::consts::LN_2).abs() < 1e-12);

        // random batch matches the scalar BCE loop
        let mut rng = seeded(5, Stream::BatchSampling);
        let n = 23;
        let ov: Vec<f64> = (0..n).map(|_| rng.gen_range(0.001..0.999)).collect();
        let mv: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let mut want = 0.0;
        for i in 0..n {
            let o = ov[i].clamp(MASK_CLAMP_EPS, 1.0 - MASK_CLAMP_EPS);
            want -= mv[i] * o.ln() + (1.0 - mv[i]) * (1.0 - o).ln();
        }
        want /= n as f64;
        let got = t.item(mask_loss(
            &t,
            t.constant(tensor2(n, 1, ov)),
            t.constant(tensor2(n, 1, mv)),
        ));
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn depth_loss_examples() {
        let t = Tape::<f64>::new();
        // alpha=1, beta=0, rendered == dbar -> 0
        let d = t.constant(tensor2(3, 1, vec![2.0, 2.5, 1.0]));
        let a1 = t.constant(tensor2(3, 1, vec![1.0; 3]));
        let b0 = t.constant(tensor2(3, 1, vec![0.0; 3]));
        assert_eq!(t.item(depth_loss(&t, d, d, a1, b0)), 0.0);
        // dbar = 2, alpha = 1.5, beta = 0.1 -> target 3.1
        let dhat = t.constant(tensor2(1, 1, vec![3.1]));
        let dbar = t.constant(tensor2(1, 1, vec![2.0]));
        let a = t.constant(tensor2(1, 1, vec![1.5]));
        let b = t.constant(tensor2(1, 1, vec![0.1]));
        assert!(t.item(depth_loss(&t, dhat, dbar, a, b)) < 1e-12);
        let off = t.constant(tensor2(1, 1, vec![3.0]));
        assert!((t.item(depth_loss(&t, off, dbar, a, b)) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn total_loss_weighting() {
        let t = Tape::<f64>::new();
        let one = || t.constant(Tensor::scalar(1.0));
        let w = LossWeights::default();
        let tl = total_loss(&t, one(), one(), Some(one()), Some(one()), Some(one()), &w, 0);
        // 1 + 0.1 + 0.1 + 0.5 + 0.01
        assert!((t.item(tl.total) - 1.71).abs() < 1e-12);
        assert!((tl.report.total - (tl.report.rgb + 0.1 * tl.report.eikonal + 0.1 * tl.report.mask + 0.5 * tl.report.feature + 0.01 * tl.report.depth)).abs() < 1e-10);

        let zero = || t.constant(Tensor::scalar(0.0));
        let tz = total_loss(&t, zero(), zero(), Some(zero()), Some(zero()), Some(zero()), &w, 0);
        assert_eq!(t.item(tz.total), 0.0);
    }

    #[test]
    fn zeroed_weight_removes_gradient_exactly() {
        // grads under (rgb + 0*eikonal) equal grads under rgb alone
        let build = |weights: &LossWeights| -> Vec<f64> {
            let t = Tape::<f64>::new();
            let x = t.leaf(tensor2(2, 3, vec![0.3, -0.2, 0.5, 0.9, 0.1, -0.6]));
            let target = t.constant(tensor2(2, 3, vec![0.0; 6]));
            let rgb = rgb_loss(&t, x, target);
            let eik = eikonal_loss(&t, x);
            let tl = total_loss(&t, rgb, eik, None, None, None, weights, 0);
            t.backward(tl.total);
            t.grad(x).unwrap().data().to_vec()
        };
        let with_zero = build(&LossWeights {
            eikonal: 0.0,
            ..LossWeights::default()
        });
        let t = Tape::<f64>::new();
        let x = t.leaf(tensor2(2, 3, vec![0.3, -0.2, 0.5, 0.9, 0.1, -0.6]));
        let target = t.constant(tensor2(2, 3, vec![0.0; 6]));
        let rgb_only = rgb_loss(&t, x, target);
        t.backward(rgb_only);
        let want = t.grad(x).unwrap();
        assert_eq!(with_zero, want.data());
    }

    #[test]
    fn feature_loss_identity_projection_is_zero() {
        // a "source" view that is the reference view itself: projecting the
        // surface point back yields p0, so the sampled and reference
        // features coincide
        let t = Tape::<f64>::new();
        let k = Intrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 16.0,
            cy: 16.0,
            width: 32,
            height: 32,
        };
        let grid = Arc::new(SampleGrid {
            channels: 2,
            height: 8,
            width: 8,
            data: (0..128).map(|i| (i as f64 * 0.37).sin()).collect(),
        });
        // point on the optical axis at depth 2 projects to the image center
        let pts = t.constant(tensor2(1, 3, vec![0.0, 0.0, 2.0]));
        let identity = t.constant(tensor2(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]));
        let zero_t = t.constant(tensor2(1, 3, vec![0.0; 3]));
        // reference feature = bilinear sample at the same projected cell
        let u = (16.0 - 2.0) / 4.0;
        let fm = FeatureMap {
            channels: 2,
            height: 8,
            width: 8,
            data: grid.data.iter().map(|&v| v as f32).collect(),
        };
        let ref_feats = tensor2(1, 2, fm.sample(u, u));
        let res = feature_loss(
            &t,
            pts,
            &ref_feats,
            &[FeatureSourceGroup {
                rows: vec![0],
                pose_r: identity,
                pose_t: zero_t,
                grid,
            }],
            &k,
            1,
            None,
        );
        assert!(t.item(res.loss).abs() < 1e-6, "{}", t.item(res.loss));
        assert_eq!(res.contributing_rays, 1);
    }

    #[test]
    fn feature_loss_all_out_of_bounds_is_zero_with_counter() {
        let t = Tape::<f64>::new();
        let k = Intrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 16.0,
            cy: 16.0,
            width: 32,
            height: 32,
        };
        let grid = Arc::new(SampleGrid {
            channels: 2,
            height: 8,
            width: 8,
            data: vec![0.0; 128],
        });
        // a point far off-axis projects outside; a point behind the camera
        // is rejected by depth
        let pts = t.constant(tensor2(2, 3, vec![50.0, 0.0, 1.0, 0.0, 0.0, -2.0]));
        let identity = t.constant(tensor2(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]));
        let zero_t = t.constant(tensor2(1, 3, vec![0.0; 3]));
        let ref_feats = tensor2(2, 2, vec![0.0; 4]);
        let res = feature_loss(
            &t,
            pts,
            &ref_feats,
            &[FeatureSourceGroup {
                rows: vec![0, 1],
                pose_r: identity,
                pose_t: zero_t,
                grid,
            }],
            &k,
            1,
            None,
        );
        assert_eq!(t.item(res.loss), 0.0);
        assert_eq!(res.contributing_rays, 0);
        assert_eq!(res.skipped_rays, 2);
    }
}
