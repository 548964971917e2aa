//! The trainable model: geometry (SDF), color, and camera-pose MLPs plus the
//! per-view depth-undistortion pairs and the logistic-density sharpness.

mod color;
mod mlp;
mod pose;
mod sdf;

pub use color::ColorNetwork;
pub use mlp::Linear;
pub use pose::{PoseGraph, PoseMode, PoseNetwork};
pub use sdf::{SdfGraphEval, SdfNetwork};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Binding, ParamId, ParameterSet, Tape, Tensor, Value};
use crate::cameras::Pose;
use crate::num::Real;
use crate::rngs::{seeded, DetRng, Stream};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub sdf_hidden_layers: usize,
    pub sdf_hidden_size: usize,
    /// 0-based hidden layer whose input receives the encoded-input concat.
    pub sdf_skip_layer: usize,
    pub n_features: usize,
    pub color_hidden_layers: usize,
    pub color_hidden_size: usize,
    pub pose_layers: usize,
    pub pose_hidden_size: usize,
    pub fourier_m: usize,
    pub fourier_sigma: f64,
    pub num_freqs_position: usize,
    pub num_freqs_direction: usize,
    pub sphere_init_radius: f64,
    pub softplus_beta: f64,
    /// Gain on the first-layer scale (head mean divides it back out); lifts
    /// preactivations clear of the softplus smoothing zone so the initial
    /// field tracks |x| - r0 tightly.
    pub geometric_init_gain: f64,
    /// 1/s at initialization.
    pub deviation_init_inv_s: f64,
    /// s = exp(scale * raw); the scale lets s move quickly under Adam.
    pub deviation_exp_scale: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            sdf_hidden_layers: 8,
            sdf_hidden_size: 256,
            sdf_skip_layer: 3,
            n_features: 256,
            color_hidden_layers: 4,
            color_hidden_size: 256,
            pose_layers: 3,
            pose_hidden_size: 64,
            fourier_m: 128,
            fourier_sigma: 1.0,
            num_freqs_position: 6,
            num_freqs_direction: 4,
            sphere_init_radius: 0.5,
            softplus_beta: 100.0,
            geometric_init_gain: 4.0,
            deviation_init_inv_s: 0.3,
            deviation_exp_scale: 10.0,
        }
    }
}

/// Trainable scalar controlling the logistic density sharpness; stored as an
/// unconstrained raw value mapped through exp so s > 0 always.
pub struct DeviationParam {
    pub raw: ParamId,
    pub exp_scale: f64,
}

impl DeviationParam {
    pub fn new<T: Real>(params: &mut ParameterSet<T>, cfg: &NetworkConfig) -> Self {
        let raw = (1.0 / cfg.deviation_init_inv_s).ln() / cfg.deviation_exp_scale;
        DeviationParam {
            raw: params.register("deviation/raw", Tensor::scalar(T::from_f64(raw))),
            exp_scale: cfg.deviation_exp_scale,
        }
    }

    /// s as a graph scalar.
    pub fn s_graph<T: Real>(&self, tape: &Tape<T>, binding: &Binding) -> Value {
        tape.exp(tape.scale(binding.leaf(self.raw), T::from_f64(self.exp_scale)))
    }

    pub fn s_value<T: Real>(&self, params: &ParameterSet<T>) -> f64 {
        (params.get(self.raw).value.item().to_f64() * self.exp_scale).exp()
    }
}

/// Per-view affine depth correction (alpha, beta), initialized to (1, 0).
pub struct UndistortionParams {
    pub alpha: ParamId,
    pub beta: ParamId,
    pub n_views: usize,
}

impl UndistortionParams {
    pub fn new<T: Real>(params: &mut ParameterSet<T>, n_views: usize) -> Self {
        UndistortionParams {
            alpha: params.register("undistort/alpha", Tensor::full(vec![n_views, 1], T::ONE)),
            beta: params.register("undistort/beta", Tensor::zeros(vec![n_views, 1])),
            n_views,
        }
    }

    pub fn values<T: Real>(&self, params: &ParameterSet<T>) -> Vec<(f64, f64)> {
        let a = &params.get(self.alpha).value;
        let b = &params.get(self.beta).value;
        (0..self.n_views)
            .map(|i| (a.data()[i].to_f64(), b.data()[i].to_f64()))
            .collect()
    }
}

/// Everything trainable, bundled with its parameter registry.
pub struct Model<T: Real> {
    pub params: ParameterSet<T>,
    pub sdf: SdfNetwork,
    pub color: ColorNetwork,
    pub pose: PoseNetwork,
    pub deviation: DeviationParam,
    pub undistort: UndistortionParams,
    pub config: NetworkConfig,
}

impl<T: Real> Model<T> {
    pub fn new(
        cfg: &NetworkConfig,
        n_views: usize,
        pose_mode: PoseMode,
        initial_poses: Vec<Pose>,
        seed: u64,
    ) -> Self {
        let mut params = ParameterSet::new();
        let mut rng: DetRng = seeded(seed, Stream::NetworkInit);
        let sdf = SdfNetwork::new(&mut params, cfg, &mut rng);
        let color = ColorNetwork::new(&mut params, cfg, &mut rng);
        let pose = PoseNetwork::new(
            &mut params,
            cfg,
            n_views,
            pose_mode,
            initial_poses,
            seed ^ 0xF0F0_1234,
            &mut rng,
        );
        let deviation = DeviationParam::new(&mut params, cfg);
        let undistort = UndistortionParams::new(&mut params, n_views);
        Model {
            params,
            sdf,
            color,
            pose,
            deviation,
            undistort,
            config: *cfg,
        }
    }

    /// Parameter-group membership by name prefix; disjoint and exhaustive.
    pub fn group_of(name: &str) -> ParamGroup {
        if name.starts_with("sdf_mlp/") {
            ParamGroup::SdfNet
        } else if name.starts_with("color_mlp/") {
            ParamGroup::ColorNet
        } else if name.starts_with("pose_mlp/") {
            ParamGroup::PoseNet
        } else if name.starts_with("undistort/") {
            ParamGroup::Undistortion
        } else if name.starts_with("deviation/") {
            ParamGroup::Deviation
        } else {
            panic!("parameter {name} belongs to no group");
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    SdfNet,
    ColorNet,
    PoseNet,
    Undistortion,
    Deviation,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::SdfNet,
        ParamGroup::ColorNet,
        ParamGroup::PoseNet,
        ParamGroup::Undistortion,
        ParamGroup::Deviation,
    ];
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::fd;
    use crate::cameras;
    use rand::Rng;

    fn test_model(n_views: usize) -> Model<f64> {
        Model::new(
            &NetworkConfig::default(),
            n_views,
            PoseMode::Absolute,
            vec![Pose::identity(); n_views],
            11,
        )
    }

    #[test]
    fn structural_dimensions() {
        let m = test_model(4);
        // 8 hidden layers of 256; skip: 4th hidden layer input is 256 + 39
        assert_eq!(m.sdf.num_hidden_layers(), 8);
        assert_eq!(m.sdf.hidden_size(), 256);
        let dims = m.sdf.layer_in_dims();
        assert_eq!(dims[3], 256 + 39);
        assert_eq!(dims[0], 39);
        // head outputs 1 + 256
        assert_eq!(m.sdf.n_features, 256);
        // color: 4 hidden layers of 256, input 3 + 27 + 3 + 256
        assert_eq!(m.color.num_hidden_layers(), 4);
        assert_eq!(m.color.hidden_size(), 256);
        assert_eq!(m.color.layer_in_dims()[0], 3 + 27 + 3 + 256);
        // pose MLP: 3 layers, hidden 64, fed by a 256-dim embedding
        assert_eq!(m.pose.num_layers(), 3);
        assert_eq!(m.pose.hidden_size(), 64);
        assert_eq!(m.pose.layer_in_dims(), vec![256, 64, 64]);
        assert_eq!(m.pose.embedding.dim(), 256);
    }

    #[test]
    fn sphere_initialization() {
        // mean |f(x) - (|x| - r0)| over 1000 uniform points in the 1.5-ball
        let m = test_model(2);
        let mut rng = seeded(5, Stream::MeshSampling);
        let mut pts = Vec::new();
        let mut n = 0;
        while n < 1000 {
            let p = [
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5),
            ];
            if cameras::norm3(p) <= 1.5 {
                pts.extend_from_slice(&p);
                n += 1;
            }
        }
        let sdf = m.sdf.sdf_values(&m.params, &pts, 0.0);
        let mut err = 0.0;
        for (i, &f) in sdf.iter().enumerate() {
            let x = [pts[i * 3], pts[i * 3 + 1], pts[i * 3 + 2]];
            err += (f - (cameras::norm3(x) - 0.5)).abs();
        }
        err /= 1000.0;
        assert!(err < 0.05, "sphere-init mean abs deviation {err}");
    }

    #[test]
    fn initial_field_signs_and_center_value() {
        let m = test_model(2);
        let sdf = m
            .sdf
            .sdf_values(&m.params, &[0.0, 0.0, 0.0, 2.0, 0.0, 0.0], 0.0);
        // center is inside (≈ -r0 within 0.1), (2,0,0) is outside
        assert!((sdf[0] + 0.5).abs() < 0.1, "f(0) = {}", sdf[0]);
        assert!(sdf[0] < 0.0);
        assert!(sdf[1] > 0.0);
    }

    #[test]
    fn analytic_normals_match_finite_differences() {
        let m = test_model(2);
        let mut rng = seeded(6, Stream::MeshSampling);
        for _ in 0..20 {
            let p = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let (_, normals) = m.sdf.sdf_values_and_normals(&m.params, &p, 3.5);
            let mut f = |xs: &[f64]| m.sdf.sdf_values(&m.params, xs, 3.5)[0];
            for axis in 0..3 {
                let fdv = fd::central_diff(&mut f, &p, axis, 1e-4);
                let an = normals[0][axis];
                assert!(
                    fd::rel_err(fdv, an, 1e-6) < 1e-4,
                    "axis {axis}: fd {fdv} vs analytic {an}"
                );
            }
        }
    }

    #[test]
    fn color_output_in_unit_interval_and_deterministic() {
        let m = test_model(2);
        let tape = Tape::<f64>::new();
        let binding = Binding::bind_constants(&tape, &m.params);
        let n = 5;
        let mut rng = seeded(7, Stream::MeshSampling);
        let x = tape.constant(Tensor::new(
            vec![n, 3],
            (0..n * 3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        ));
        let d = tape.constant(Tensor::new(
            vec![n, 27],
            (0..n * 27).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        ));
        let nv = tape.constant(Tensor::new(
            vec![n, 3],
            (0..n * 3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        ));
        let z = tape.constant(Tensor::new(
            vec![n, 256],
            (0..n * 256).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        ));
        let rgb = m.color.eval_graph(&tape, &binding, x, d, nv, z);
        let v = tape.value(rgb);
        assert!(v.data().iter().all(|&c| c > 0.0 && c < 1.0));
        let rgb2 = m.color.eval_graph(&tape, &binding, x, d, nv, z);
        assert_eq!(v.data(), tape.value(rgb2).data());
    }

    #[test]
    fn pose_head_zero_init_gives_identity_or_initial() {
        // absolute: identity rotation, zero translation
        let m = test_model(3);
        let p = m.pose.eval_pose(&m.params, 1);
        assert!(p.orthogonality_error() < 1e-12);
        assert!(crate::so3::rotation_angle(&p.r) == 0.0);
        assert_eq!(p.t, [0.0, 0.0, 0.0]);

        // delta: initial pose reproduced exactly
        let init = Pose::from_axis_angle([0.3, -0.4, 0.2], [0.1, 0.2, -0.3]);
        let md: Model<f64> = Model::new(
            &NetworkConfig::default(),
            2,
            PoseMode::Delta,
            vec![init; 2],
            3,
        );
        let p = md.pose.eval_pose(&md.params, 0);
        assert_eq!(p.t, init.t);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(p.r[i][j], init.r[i][j]);
            }
        }
    }

    #[test]
    fn pose_rotation_always_orthonormal() {
        // perturb the head weights, outputs must stay in SO(3) (Rodrigues oracle)
        let mut m = test_model(4);
        let names: Vec<String> = m.params.iter().map(|(_, p)| p.name.clone()).collect();
        let mut rng = seeded(8, Stream::MeshSampling);
        for name in names {
            if name.starts_with("pose_mlp/layer2") {
                let id = m.params.iter().find(|(_, p)| p.name == name).unwrap().0;
                for v in m.params.get_mut(id).value.data_mut() {
                    *v = rng.gen_range(-0.5..0.5);
                }
            }
        }
        for view in 0..4 {
            let p = m.pose.eval_pose(&m.params, view);
            assert!(p.orthogonality_error() < 1e-10);
        }
    }

    #[test]
    fn pose_index_out_of_range_rejected() {
        let m = test_model(2);
        let r = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            m.pose.eval_pose(&m.params, 2)
        }));
        assert!(r.is_err());
    }

    #[test]
    fn deviation_positive_and_initialized_to_inv_0p3() {
        let m = test_model(2);
        let s = m.deviation.s_value(&m.params);
        assert!((1.0 / s - 0.3).abs() < 1e-12);
    }

    #[test]
    fn parameter_groups_disjoint_and_exhaustive() {
        let m = test_model(3);
        let mut counts = std::collections::HashMap::new();
        for (_, p) in m.params.iter() {
            *counts.entry(Model::<f64>::group_of(&p.name)).or_insert(0usize) += 1;
        }
        for g in ParamGroup::ALL {
            assert!(counts.contains_key(&g), "group {g:?} empty");
        }
        let total: usize = counts.values().sum();
        assert_eq!(total, m.params.len());
    }
}
