//! Hierarchical ray sampling, discrete alpha compositing of the SDF,
//! rendered color/depth/opacity, and zero-crossing surface extraction.
//!
//! Sample layout: a ray carries n+1 sorted endpoint distances forming n
//! sections. The SDF is evaluated at section endpoints (for alpha), colors
//! and normals at section midpoints. alpha_i = max((phi(f_i) -
//! phi(f_{i+1}))/phi(f_i), 0) with phi the logistic CDF of sharpness s;
//! w_i = alpha_i * prod_{j<i}(1 - alpha_j).

mod pipeline;

pub use pipeline::{build_render_graph, render_image, RenderGraph, RenderedImage};

use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{Tape, Tensor, Value};
use crate::num::{sigmoid, Real};
use crate::rngs::DetRng;
use serde::{Deserialize, Serialize};

/// Guard for the alpha denominator; max(phi, GUARD) never perturbs a phi
/// that matters (phi is this small only many sigmoids deep inside the
/// surface, where the transmittance is already zero).
pub const ALPHA_DENOM_GUARD: f64 = 1e-7;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub n_coarse: usize,
    pub n_importance_rounds: usize,
    pub n_importance_per_round: usize,
    /// Stratified jitter of the coarse samples (off = exact linspace).
    pub jitter: bool,
    /// Sharpness of round k of importance sampling is base * 2^k.
    pub up_sample_s_base: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            n_coarse: 64,
            n_importance_rounds: 4,
            n_importance_per_round: 16,
            jitter: true,
            up_sample_s_base: 32.0,
        }
    }
}

impl SamplingConfig {
    /// Total endpoint count per ray.
    pub fn n_samples(&self) -> usize {
        self.n_coarse + self.n_importance_rounds * self.n_importance_per_round
    }

    /// Section count per ray.
    pub fn n_sections(&self) -> usize {
        self.n_samples() - 1
    }
}

/// NeuS discrete alpha from two consecutive endpoint SDF values.
pub fn neus_alpha(sdf_i: f64, sdf_next: f64, s: f64) -> f64 {
    let phi_i = sigmoid(s * sdf_i);
    let phi_n = sigmoid(s * sdf_next);
    ((phi_i - phi_n) / phi_i.max(ALPHA_DENOM_GUARD)).max(0.0)
}

/// Per-section weights w_i = alpha_i * prod_{j<i} (1 - alpha_j).
pub fn weights_from_alphas(alphas: &[f64]) -> Vec<f64> {
    let mut trans = 1.0;
    alphas
        .iter()
        .map(|&a| {
            let w = a * trans;
            trans *= 1.0 - a;
            w
        })
        .collect()
}

/// Weights of one ray from endpoint SDF values.
pub fn neus_weights(sdf: &[f64], s: f64) -> Vec<f64> {
    let alphas: Vec<f64> = sdf
        .windows(2)
        .map(|w| neus_alpha(w[0], w[1], s))
        .collect();
    weights_from_alphas(&alphas)
}

/// Plain compositing result for one ray.
#[derive(Clone, Debug)]
pub struct RenderResult {
    pub rgb: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
    pub surface_point: Option<[f64; 3]>,
}

/// Composite one ray from per-section weights, colors, and midpoint
/// distances. rgb/depth are the weighted sums (no background model).
pub fn composite(weights: &[f64], colors: &[[f64; 3]], mid_t: &[f64]) -> ([f64; 3], f64, f64) {
    let mut rgb = [0.0; 3];
    let mut depth = 0.0;
    let mut opacity = 0.0;
    for ((&w, c), &t) in weights.iter().zip(colors).zip(mid_t) {
        for k in 0..3 {
            rgb[k] += w * c[k];
        }
        depth += w * t;
        opacity += w;
    }
    (rgb, depth, opacity)
}

/// Zero-crossing of the endpoint SDF values: the first index i with
/// sdf[i] > 0 and sdf[i+1] < 0 (the visible surface). Returns (i, t*) with
/// t* by linear interpolation.
pub fn surface_crossing(t: &[f64], sdf: &[f64]) -> Option<(usize, f64)> {
    debug_assert_eq!(t.len(), sdf.len());
    for i in 0..sdf.len().saturating_sub(1) {
        if sdf[i] > 0.0 && sdf[i + 1] < 0.0 {
            let tstar = t[i] + sdf[i] * (t[i + 1] - t[i]) / (sdf[i] - sdf[i + 1]);
            return Some((i, tstar));
        }
    }
    None
}

/// Coarse + importance sampling for a batch of rays sharing one sampling
/// config. `sdf_fn` evaluates the scene SDF at a flattened point batch; it is
/// called once per round (not per ray). Returns per-ray sorted endpoint
/// distances, length `cfg.n_samples()`.
pub fn sample_rays_batch(
    origins: &[[f64; 3]],
    dirs: &[[f64; 3]],
    ranges: &[(f64, f64)],
    sdf_fn: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    cfg: &SamplingConfig,
    rng: &mut DetRng,
) -> Vec<Vec<f64>> {
    let n_rays = origins.len();
    assert!(cfg.n_coarse >= 2, "need at least 2 coarse samples");

    // coarse distances
    let mut t: Vec<Vec<f64>> = Vec::with_capacity(n_rays);
    for &(near, far) in ranges.iter().take(n_rays) {
        let mut row = Vec::with_capacity(cfg.n_samples());
        if cfg.jitter {
            let w = (far - near) / cfg.n_coarse as f64;
            for i in 0..cfg.n_coarse {
                row.push(near + (i as f64 + rng.gen_range(0.0..1.0)) * w);
            }
        } else {
            let w = (far - near) / (cfg.n_coarse - 1) as f64;
            for i in 0..cfg.n_coarse {
                row.push(near + i as f64 * w);
            }
        }
        t.push(row);
    }

    let eval_round = |t_new: &[Vec<f64>], sdf_fn: &mut dyn FnMut(&[f64]) -> Vec<f64>| -> Vec<Vec<f64>> {
        let mut pts = Vec::new();
        for (r, row) in t_new.iter().enumerate() {
            for &ti in row {
                pts.push(origins[r][0] + ti * dirs[r][0]);
                pts.push(origins[r][1] + ti * dirs[r][1]);
                pts.push(origins[r][2] + ti * dirs[r][2]);
            }
        }
        let vals = sdf_fn(&pts);
        let mut out = Vec::with_capacity(t_new.len());
        let mut off = 0;
        for row in t_new {
            out.push(vals[off..off + row.len()].to_vec());
            off += row.len();
        }
        out
    };

    let mut sdf = eval_round(&t, sdf_fn);

    for round in 0..cfg.n_importance_rounds {
        let s_up = cfg.up_sample_s_base * (1u64 << round) as f64;
        // draw new samples from the weight distribution of each ray
        let mut t_new: Vec<Vec<f64>> = Vec::with_capacity(n_rays);
        for r in 0..n_rays {
            let w = neus_weights(&sdf[r], s_up);
            // piecewise-constant CDF over sections with a small floor
            let mut cdf = Vec::with_capacity(w.len() + 1);
            let mut acc = 0.0;
            cdf.push(0.0);
            for &wi in &w {
                acc += wi + 1e-5;
                cdf.push(acc);
            }
            let total = acc;
            let mut row = Vec::with_capacity(cfg.n_importance_per_round);
            for k in 0..cfg.n_importance_per_round {
                let u = (k as f64 + rng.gen_range(0.0..1.0)) / cfg.n_importance_per_round as f64
                    * total;
                // binary search for the section containing u
                let mut lo = 0;
                let mut hi = w.len();
                while lo + 1 < hi {
                    let mid = (lo + hi) / 2;
                    if cdf[mid] <= u {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let frac = (u - cdf[lo]) / (cdf[lo + 1] - cdf[lo]);
                row.push(t[r][lo] + frac * (t[r][lo + 1] - t[r][lo]));
            }
            t_new.push(row);
        }
        let sdf_new = eval_round(&t_new, sdf_fn);
        // merge sorted
        for r in 0..n_rays {
            let mut merged: Vec<(f64, f64)> = t[r]
                .iter()
                .copied()
                .zip(sdf[r].iter().copied())
                .chain(t_new[r].iter().copied().zip(sdf_new[r].iter().copied()))
                .collect();
            merged.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            // enforce strict monotonicity (collisions have measure zero)
            for i in 1..merged.len() {
                if merged[i].0 <= merged[i - 1].0 {
                    merged[i].0 = merged[i - 1].0 + 1e-12;
                }
            }
            t[r] = merged.iter().map(|p| p.0).collect();
            sdf[r] = merged.iter().map(|p| p.1).collect();
        }
    }
    t
}

/// Differentiable alpha computation: endpoint SDF [r*(s+1), 1] -> per-section
/// alphas [r*s, 1].
pub fn alpha_graph<T: Real>(
    tape: &Tape<T>,
    sdf_end: Value,
    s: Value,
    n_rays: usize,
    sections: usize,
) -> Value {
    let mut prev_idx = Vec::with_capacity(n_rays * sections);
    let mut next_idx = Vec::with_capacity(n_rays * sections);
    for r in 0..n_rays {
        for i in 0..sections {
            prev_idx.push(r * (sections + 1) + i);
            next_idx.push(r * (sections + 1) + i + 1);
        }
    }
    let scaled = tape.mul(sdf_end, s);
    let phi = tape.sigmoid(scaled);
    let phi_prev = tape.gather_rows(phi, Arc::new(prev_idx));
    let phi_next = tape.gather_rows(phi, Arc::new(next_idx));
    let guard = tape.constant(Tensor::full(vec![1, 1], T::from_f64(ALPHA_DENOM_GUARD)));
    let denom = tape.maximum(phi_prev, guard);
    let ratio = tape.mul(tape.sub(phi_prev, phi_next), tape.recip(denom));
    tape.relu(ratio)
}

/// Differentiable compositing from per-section alphas.
pub struct CompositeGraph {
    /// [r, 3]
    pub rgb: Value,
    /// [r, 1] weighted midpoint distance (unnormalized, Eq.-8 style)
    pub depth: Value,
    /// [r, 1] sum of weights
    pub opacity: Value,
    /// [r*s, 1]
    pub weights: Value,
}

pub fn composite_graph<T: Real>(
    tape: &Tape<T>,
    alphas: Value,
    colors: Value,
    mid_t: Value,
    sections: usize,
) -> CompositeGraph {
    let one_minus = tape.add_scalar(tape.neg(alphas), T::ONE);
    let trans = tape.cumprod_exclusive(one_minus, sections);
    let weights = tape.mul(alphas, trans);
    let rgb = tape.sum_segments(tape.mul(colors, weights), sections);
    let depth = tape.sum_segments(tape.mul(weights, mid_t), sections);
    let opacity = tape.sum_segments(weights, sections);
    CompositeGraph {
        rgb,
        depth,
        opacity,
        weights,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cameras::ray_sphere_range;
    use crate::rngs::{seeded, Stream};

    #[test]
    fn alpha_examples() {
        // no crossing
        assert_eq!(neus_alpha(0.25, 0.25, 20.0), 0.0);
        // receding surface clamps to zero
        assert_eq!(neus_alpha(-0.1, 0.2, 20.0), 0.0);
        // Oracle: direct logistic-CDF evaluation.
        let phi = |x: f64| 1.0 / (1.0 + (-x).exp());
        let want = (phi(10.0 * 0.5) - phi(10.0 * -0.5)) / phi(10.0 * 0.5);
        let got = neus_alpha(0.5, -0.5, 10.0);
        assert!((got - want).abs() < 1e-12);
        assert!((got - 0.993263).abs() < 1e-6, "{got}");
    }

    #[test]
    fn composite_delta_weight() {
        // alphas (0,1,0) -> the middle section's color and distance
        let w = weights_from_alphas(&[0.0, 1.0, 0.0]);
        let colors = [[0.2, 0.3, 0.4], [0.9, 0.1, 0.5], [0.0, 0.0, 1.0]];
        let (rgb, depth, opacity) = composite(&w, &colors, &[1.0, 2.0, 3.0]);
        assert_eq!(rgb, [0.9, 0.1, 0.5]);
        assert_eq!(depth, 2.0);
        assert_eq!(opacity, 1.0);
    }

    #[test]
    fn composite_all_transparent() {
        let w = weights_from_alphas(&[0.0; 4]);
        let (rgb, depth, opacity) = composite(&w, &[[1.0; 3]; 4], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(rgb, [0.0; 3]);
        assert_eq!(depth, 0.0);
        assert_eq!(opacity, 0.0);
    }

    #[test]
    fn weights_bounded_and_graph_matches_plain() {
        let mut rng = seeded(3, Stream::RaySampling);
        use rand::Rng;
        for _ in 0..50 {
            let n = 33;
            let sdf: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.4..0.4)).collect();
            let s = rng.gen_range(1.0..200.0);
            let w = neus_weights(&sdf, s);
            let total: f64 = w.iter().sum();
            assert!(w.iter().all(|&x| x >= 0.0));
            assert!(total <= 1.0 + 1e-6, "sum {total}");

            let tape = Tape::<f64>::new();
            let sdf_node = tape.constant(Tensor::new(vec![n, 1], sdf.clone()));
            let s_node = tape.constant(Tensor::scalar(s));
            let a = alpha_graph(&tape, sdf_node, s_node, 1, n - 1);
            let mid = tape.constant(Tensor::new(vec![n - 1, 1], vec![0.0; n - 1]));
            let colors = tape.constant(Tensor::zeros(vec![n - 1, 3]));
            let cg = composite_graph(&tape, a, colors, mid, n - 1);
            let wg = tape.value(cg.weights);
            for (a, b) in w.iter().zip(wg.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn depth_of_opaque_surface_within_sample_range() {
        // dense sampling of the analytic sphere at large s: depth within one
        // sample spacing of the quadratic intersection (Oracle: ray-sphere
        // solver), and inside [t_first, t_last]
        let o = [0.0, 0.0, -3.0];
        let d = [0.0, 0.0, 1.0];
        let (near, far) = ray_sphere_range(o, d, 1.5).unwrap();
        let n = 257;
        let t: Vec<f64> = (0..n)
            .map(|i| near + (far - near) * i as f64 / (n - 1) as f64)
            .collect();
        let sdf: Vec<f64> = t
            .iter()
            .map(|&ti| {
                let p = [o[0], o[1], o[2] + ti];
                (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - 0.5
            })
            .collect();
        let w = neus_weights(&sdf, 512.0);
        let mid: Vec<f64> = t.windows(2).map(|p| 0.5 * (p[0] + p[1])).collect();
        let colors = vec![[1.0, 1.0, 1.0]; mid.len()];
        let (_, depth, opacity) = composite(&w, &colors, &mid);
        assert!(opacity > 0.999);
        let analytic = 3.0 - 0.5;
        let spacing = (far - near) / (n - 1) as f64;
        assert!(
            (depth - analytic).abs() < spacing,
            "depth {depth} vs analytic {analytic} (spacing {spacing})"
        );
        assert!(depth >= t[0] && depth <= t[n - 1]);
    }

    #[test]
    fn unbiased_weight_peak_at_crossing() {
        // argmax w_i within one sample spacing of the SDF zero-crossing
        let o = [0.2, -0.1, -3.0];
        let d = crate::cameras::normalize3([0.02, 0.03, 1.0]);
        let (near, far) = ray_sphere_range(o, d, 1.5).unwrap();
        let n = 257;
        let t: Vec<f64> = (0..n)
            .map(|i| near + (far - near) * i as f64 / (n - 1) as f64)
            .collect();
        let sphere = |ti: f64| {
            let p = [o[0] + ti * d[0], o[1] + ti * d[1], o[2] + ti * d[2]];
            (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - 0.5
        };
        let sdf: Vec<f64> = t.iter().map(|&ti| sphere(ti)).collect();
        let w = neus_weights(&sdf, 128.0);
        let peak = w
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let b = crate::cameras::dot3(o, d);
        let c = crate::cameras::dot3(o, o) - 0.25;
        let t_hit = -b - (b * b - c).sqrt();
        let spacing = (far - near) / (n - 1) as f64;
        let peak_mid = 0.5 * (t[peak] + t[peak + 1]);
        assert!(
            (peak_mid - t_hit).abs() <= spacing,
            "peak at {peak_mid}, crossing {t_hit}"
        );
    }

    #[test]
    fn occlusion_awareness_two_surfaces() {
        // two zero-crossing pairs: nearly all weight mass lands before the
        // second surface once s is large
        let t: Vec<f64> = (0..512).map(|i| i as f64 * 0.01).collect();
        let sdf: Vec<f64> = t
            .iter()
            .map(|&ti| {
                // first surface at t=1.0, second at t=3.0
                let d1 = (ti - 1.0).abs() - 0.4;
                let d2 = (ti - 3.0).abs() - 0.4;
                d1.min(d2)
            })
            .collect();
        let w = neus_weights(&sdf, 64.0);
        let first: f64 = w
            .iter()
            .zip(&t)
            .filter(|(_, &ti)| ti < 2.0)
            .map(|(wi, _)| wi)
            .sum();
        let second: f64 = w
            .iter()
            .zip(&t)
            .filter(|(_, &ti)| ti >= 2.0)
            .map(|(wi, _)| wi)
            .sum();
        assert!(
            first >= 10.0 * second,
            "first-surface mass {first}, second {second}"
        );
    }

    #[test]
    fn surface_crossing_interpolation() {
        let (i, tstar) = surface_crossing(&[1.0, 2.0, 3.0, 4.0], &[0.3, 0.1, -0.1, -0.3]).unwrap();
        assert_eq!(i, 1);
        assert!((tstar - 2.5).abs() < 1e-15);
        assert!(surface_crossing(&[1.0, 2.0], &[0.5, 0.2]).is_none());
    }

    #[test]
    fn sampling_uniform_when_jitter_disabled() {
        let cfg = SamplingConfig {
            n_coarse: 8,
            n_importance_rounds: 0,
            n_importance_per_round: 0,
            jitter: false,
            up_sample_s_base: 32.0,
        };
        let mut rng = seeded(1, Stream::RaySampling);
        let t = sample_rays_batch(
            &[[0.0, 0.0, -3.0]],
            &[[0.0, 0.0, 1.0]],
            &[(1.0, 2.0)],
            &mut |pts| vec![1.0; pts.len() / 3],
            &cfg,
            &mut rng,
        );
        for (i, &ti) in t[0].iter().enumerate() {
            let want = 1.0 + i as f64 / 7.0;
            assert!((ti - want).abs() < 1e-12);
        }
    }

    #[test]
    fn importance_sampling_concentrates_and_sorted() {
        // Oracle: analytic sphere intersection brackets. At least half of
        // the importance samples must land in the crossing's coarse section.
        let cfg = SamplingConfig {
            n_coarse: 16,
            n_importance_rounds: 2,
            n_importance_per_round: 8,
            jitter: true,
            up_sample_s_base: 32.0,
        };
        let o = [0.0, 0.0, -3.0];
        let d = [0.0, 0.0, 1.0];
        let (near, far) = ray_sphere_range(o, d, 1.5).unwrap();
        let mut rng = seeded(7, Stream::RaySampling);
        let sphere_sdf = |pts: &[f64]| -> Vec<f64> {
            pts.chunks_exact(3)
                .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - 0.5)
                .collect()
        };
        let t = sample_rays_batch(&[o], &[d], &[(near, far)], &mut |p| sphere_sdf(p), &cfg, &mut rng);
        let row = &t[0];
        assert_eq!(row.len(), cfg.n_samples());
        for i in 1..row.len() {
            assert!(row[i] > row[i - 1], "not strictly increasing at {i}");
        }
        // entry crossing at t = 2.5; coarse spacing
        let spacing = (far - near) / cfg.n_coarse as f64;
        let near_crossing = row
            .iter()
            .filter(|&&ti| (ti - 2.5).abs() <= spacing)
            .count();
        // 16 importance samples total; at least half near the crossing
        assert!(
            near_crossing >= 8,
            "only {near_crossing} samples near the crossing"
        );
    }
}
