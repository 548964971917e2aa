//! Positional encoding with coarse-to-fine frequency masking, and Gaussian
//! Fourier embedding of camera indices.
//!
//! The window follows the standard cosine easing: band k is closed while
//! `level < k`, fully open once `level >= k + 1`, and eased in between. The
//! level ramps linearly from 0 to L over the [c2f_start, c2f_end] fraction of
//! training, so no high frequencies before 10% and all of them after 50% with
//! the default interval.

use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::autodiff::{Tape, Tensor, Value};
use crate::num::Real;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PositionalEncodingConfig {
    pub num_freqs_position: usize,
    pub num_freqs_direction: usize,
    pub include_input: bool,
    /// Fraction of training at which frequencies start opening.
    pub c2f_start: f64,
    /// Fraction of training at which all frequencies are open.
    pub c2f_end: f64,
}

impl Default for PositionalEncodingConfig {
    fn default() -> Self {
        PositionalEncodingConfig {
            num_freqs_position: 6,
            num_freqs_direction: 4,
            include_input: true,
            c2f_start: 0.1,
            c2f_end: 0.5,
        }
    }
}

impl PositionalEncodingConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0 <= self.c2f_start && self.c2f_start < self.c2f_end && self.c2f_end <= 1.0) {
            return Err(format!(
                "coarse-to-fine interval must satisfy 0 <= start < end <= 1, got [{}, {}]",
                self.c2f_start, self.c2f_end
            ));
        }
        Ok(())
    }
}

/// Encoded width for a `d`-dimensional input with `num_freqs` bands.
pub fn encoded_dim(d: usize, num_freqs: usize, include_input: bool) -> usize {
    d * (2 * num_freqs + if include_input { 1 } else { 0 })
}

/// Cosine-eased window weight of frequency band `k` at schedule `level`.
pub fn window_weight(level: f64, k: usize) -> f64 {
    let x = level - k as f64;
    if x < 0.0 {
        0.0
    } else if x < 1.0 {
        (1.0 - (x * std::f64::consts::PI).cos()) / 2.0
    } else {
        1.0
    }
}

/// Schedule position: L * clamp((step/total - start)/(end - start), 0, 1).
pub fn schedule_level(step: usize, total_steps: usize, num_freqs: usize, cfg: &PositionalEncodingConfig) -> f64 {
    assert!(total_steps > 0, "schedule_level: total_steps must be positive");
    let progress = step as f64 / total_steps as f64;
    let ramp = ((progress - cfg.c2f_start) / (cfg.c2f_end - cfg.c2f_start)).clamp(0.0, 1.0);
    num_freqs as f64 * ramp
}

/// Plain (non-graph) positional encoding of one vector.
pub fn positional_encode(x: &[f64], level: f64, num_freqs: usize, include_input: bool) -> Vec<f64> {
    let mut out = Vec::with_capacity(encoded_dim(x.len(), num_freqs, include_input));
    if include_input {
        out.extend_from_slice(x);
    }
    for k in 0..num_freqs {
        let w = window_weight(level, k);
        let f = (1u64 << k) as f64 * std::f64::consts::PI;
        for &v in x {
            out.push(w * (f * v).sin());
        }
        for &v in x {
            out.push(w * (f * v).cos());
        }
    }
    out
}

/// Graph positional encoding: x [n, d] -> [n, d*(1+2L)] (include_input true).
/// Closed bands are emitted as constant zero columns so the output width is
/// schedule-independent.
pub fn encode_graph<T: Real>(
    tape: &Tape<T>,
    x: Value,
    level: f64,
    num_freqs: usize,
    include_input: bool,
) -> Value {
    let (n, d) = {
        let s = tape.shape(x);
        let t = tape.value(x);
        let _ = s;
        t.rows_cols()
    };
    let mut parts: Vec<Value> = Vec::with_capacity(1 + 2 * num_freqs);
    if include_input {
        parts.push(x);
    }
    for k in 0..num_freqs {
        let w = window_weight(level, k);
        if w == 0.0 {
            parts.push(tape.constant(Tensor::zeros(vec![n, 2 * d])));
            continue;
        }
        let f = T::from_f64((1u64 << k) as f64 * std::f64::consts::PI);
        let arg = tape.scale(x, f);
        let s = tape.scale(tape.sin(arg), T::from_f64(w));
        let c = tape.scale(tape.cos(arg), T::from_f64(w));
        parts.push(tape.concat_cols(&[s, c]));
    }
    tape.concat_cols(&parts)
}

/// Graph positional encoding together with its three coordinate tangents
/// (d enc / d x_axis), used by the analytic-normal pathway. Input x must be
/// [n, 3]; tangents share the primal's column layout.
pub fn encode_graph_with_tangents<T: Real>(
    tape: &Tape<T>,
    x: Value,
    level: f64,
    num_freqs: usize,
) -> (Value, [Value; 3]) {
    let (n, d) = tape.value(x).rows_cols();
    assert_eq!(d, 3, "tangent encoding expects [n,3] input, got {:?}", tape.shape(x));

    let mut parts: Vec<Value> = vec![x];
    let mut tan_parts: [Vec<Value>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (axis, tp) in tan_parts.iter_mut().enumerate() {
        let mut onehot = vec![T::ZERO; 3];
        onehot[axis] = T::ONE;
        tp.push(tape.constant(Tensor::new(vec![n, 3], {
            let mut v = Vec::with_capacity(n * 3);
            for _ in 0..n {
                v.extend_from_slice(&onehot);
            }
            v
        })));
    }

    for k in 0..num_freqs {
        let w = window_weight(level, k);
        if w == 0.0 {
            let zeros = tape.constant(Tensor::zeros(vec![n, 6]));
            parts.push(zeros);
            for tp in tan_parts.iter_mut() {
                tp.push(tape.constant(Tensor::zeros(vec![n, 6])));
            }
            continue;
        }
        let freq = (1u64 << k) as f64 * std::f64::consts::PI;
        let f = T::from_f64(freq);
        let arg = tape.scale(x, f);
        let s = tape.sin(arg);
        let c = tape.cos(arg);
        let ws = T::from_f64(w);
        parts.push(tape.concat_cols(&[tape.scale(s, ws), tape.scale(c, ws)]));

        // d/dx_axis of [w sin(f x), w cos(f x)]: only the axis column is
        // nonzero: (w f cos, -w f sin)
        let wf = T::from_f64(w * freq);
        let dsin = tape.scale(c, wf);
        let dcos = tape.scale(tape.neg(s), wf);
        for (axis, tp) in tan_parts.iter_mut().enumerate() {
            let mut onehot = vec![T::ZERO; 3];
            onehot[axis] = T::ONE;
            let mask = tape.constant(Tensor::new(vec![3], onehot));
            tp.push(tape.concat_cols(&[tape.mul(dsin, mask), tape.mul(dcos, mask)]));
        }
    }
    let enc = tape.concat_cols(&parts);
    let tangents = [
        tape.concat_cols(&tan_parts[0]),
        tape.concat_cols(&tan_parts[1]),
        tape.concat_cols(&tan_parts[2]),
    ];
    (enc, tangents)
}

/// Fixed Gaussian Fourier embedding of camera indices: gamma(v) =
/// [cos(2 pi B v), sin(2 pi B v)], B in R^{m x 1} drawn once from N(0, sigma^2).
#[derive(Clone, Debug)]
pub struct FourierEmbedding {
    b: Arc<Vec<f64>>,
    pub m: usize,
    pub sigma: f64,
}

impl FourierEmbedding {
    /// Sample B once from the given seed; it is never trained.
    pub fn new(m: usize, sigma: f64, seed: u64) -> Self {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        // Box-Muller, two draws per pair
        let mut b = Vec::with_capacity(m);
        while b.len() < m {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let r = (-2.0 * u1.ln()).sqrt();
            let th = 2.0 * std::f64::consts::PI * u2;
            b.push(sigma * r * th.cos());
            if b.len() < m {
                b.push(sigma * r * th.sin());
            }
        }
        FourierEmbedding {
            b: Arc::new(b),
            m,
            sigma,
        }
    }

    /// Output dimension (2m).
    pub fn dim(&self) -> usize {
        2 * self.m
    }

    /// Embed a normalized camera coordinate v in [0, 1].
    pub fn embed(&self, v: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.m);
        for &bi in self.b.iter() {
            out.push((2.0 * std::f64::consts::PI * bi * v).cos());
        }
        for &bi in self.b.iter() {
            out.push((2.0 * std::f64::consts::PI * bi * v).sin());
        }
        out
    }

    /// Normalization of a camera index: i/(N-1), clamped for N = 1.
    pub fn normalize_index(index: usize, n_views: usize) -> f64 {
        if n_views <= 1 {
            0.0
        } else {
            index as f64 / (n_views - 1) as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_saturation_and_zero() {
        for k in 0..6 {
            assert_eq!(window_weight(6.0, k), 1.0);
            assert_eq!(window_weight(0.0, k), if k == 0 { 0.0 } else { 0.0 });
        }
        // level = 0 carries only the raw input
        let enc = positional_encode(&[0.37, -0.9], 0.0, 4, true);
        assert_eq!(&enc[..2], &[0.37, -0.9]);
        assert!(enc[2..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn window_at_level_1p5() {
        // Oracle: direct evaluation of the cosine window formula.
        let want = [1.0, 0.5, 0.0, 0.0, 0.0, 0.0];
        for (k, &w) in want.iter().enumerate() {
            assert!((window_weight(1.5, k) - w).abs() < 1e-15);
        }
    }

    #[test]
    fn schedule_endpoints_and_midpoint() {
        let cfg = PositionalEncodingConfig::default();
        assert_eq!(schedule_level(5, 100, 6, &cfg), 0.0); // before ramp
        assert_eq!(schedule_level(50, 100, 6, &cfg), 6.0); // end of ramp
        assert_eq!(schedule_level(100, 100, 6, &cfg), 6.0);
        // Oracle: linear interpolation formula, (0.3-0.1)/0.4 * 6 = 3.0
        assert!((schedule_level(30, 100, 6, &cfg) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn schedule_monotone_in_step() {
        let cfg = PositionalEncodingConfig::default();
        let mut prev = -1.0;
        for step in 0..=200 {
            let l = schedule_level(step, 200, 6, &cfg);
            assert!(l >= prev);
            prev = l;
        }
    }

    #[test]
    #[should_panic(expected = "total_steps")]
    fn zero_total_steps_rejected() {
        schedule_level(0, 0, 6, &PositionalEncodingConfig::default());
    }

    #[test]
    fn encoding_output_length() {
        let enc = positional_encode(&[0.1, 0.2, 0.3], 6.0, 6, true);
        assert_eq!(enc.len(), 3 * (1 + 2 * 6));
        assert_eq!(encoded_dim(3, 6, true), 39);
        assert_eq!(encoded_dim(3, 4, true), 27);
    }

    #[test]
    fn encoding_continuous_in_level() {
        let x = [0.51, -0.23, 0.99];
        let base = positional_encode(&x, 2.4, 6, true);
        for delta in [1e-3, 1e-5, 1e-7] {
            let up = positional_encode(&x, 2.4 + delta, 6, true);
            let dist: f64 = base
                .iter()
                .zip(up.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(dist < 10.0 * delta, "delta {delta}: dist {dist}");
        }
    }

    #[test]
    fn graph_encoding_matches_plain() {
        let tape = Tape::<f64>::new();
        let xs = vec![0.3, -0.7, 0.2, 0.9, 0.1, -0.4];
        let x = tape.constant(Tensor::new(vec![2, 3], xs.clone()));
        let enc = encode_graph(&tape, x, 2.5, 6, true);
        let got = tape.value(enc);
        for row in 0..2 {
            let want = positional_encode(&xs[row * 3..(row + 1) * 3], 2.5, 6, true);
            // graph layout groups [sin(3) cos(3)] per band, same as plain
            for (a, b) in got.row(row).iter().zip(want.iter()) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn fourier_embedding_shape_and_zero_input() {
        let emb = FourierEmbedding::new(128, 1.0, 7);
        assert_eq!(emb.dim(), 256);
        let at0 = emb.embed(0.0);
        assert_eq!(at0.len(), 256);
        // v = 0 -> cos part all ones, sin part all zeros, regardless of B
        assert!(at0[..128].iter().all(|&v| v == 1.0));
        assert!(at0[128..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fourier_embedding_deterministic_per_seed() {
        let a = FourierEmbedding::new(16, 2.0, 42).embed(0.35);
        let b = FourierEmbedding::new(16, 2.0, 42).embed(0.35);
        assert_eq!(a, b);
        let c = FourierEmbedding::new(16, 2.0, 43).embed(0.35);
        assert_ne!(a, c);
    }
}
