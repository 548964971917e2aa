//! Camera pose head: Fourier-embedded camera index -> MLP (3 layers, hidden
//! 64, GELU) -> 6 values = axis-angle rotation + translation.
//!
//! The output head starts at exactly zero, so in absolute mode every camera
//! begins as the identity (centered in the unit sphere) and in delta mode the
//! initial poses are reproduced exactly.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Binding, ParameterSet, Tape, Tensor, Value};
use crate::cameras::Pose;
use crate::encoding::FourierEmbedding;
use crate::num::Real;
use crate::rngs::DetRng;

use super::mlp::Linear;
use super::NetworkConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseMode {
    /// Dataset ground-truth poses as constants; the pose head is unused.
    FrozenGt,
    /// Network output is the pose itself.
    Absolute,
    /// Network output is a delta composed onto a stored initial pose.
    Delta,
}

/// Pose on the tape: rotation [3,3] and translation [1,3] (world->camera).
pub struct PoseGraph {
    pub r: Value,
    pub t: Value,
}

pub struct PoseNetwork {
    layers: Vec<Linear>,
    pub embedding: FourierEmbedding,
    pub mode: PoseMode,
    pub n_views: usize,
    /// Initial poses composed under delta mode (identity in absolute mode).
    pub initial: Vec<Pose>,
}

impl PoseNetwork {
    pub fn new<T: Real>(
        params: &mut ParameterSet<T>,
        cfg: &NetworkConfig,
        n_views: usize,
        mode: PoseMode,
        initial: Vec<Pose>,
        embedding_seed: u64,
        rng: &mut DetRng,
    ) -> Self {
        assert_eq!(initial.len(), n_views, "one initial pose per view");
        let embedding = FourierEmbedding::new(cfg.fourier_m, cfg.fourier_sigma, embedding_seed);
        let dims = [embedding.dim(), cfg.pose_hidden_size, cfg.pose_hidden_size];
        let mut layers = Vec::with_capacity(cfg.pose_layers);
        for l in 0..cfg.pose_layers - 1 {
            layers.push(Linear::kaiming(
                params,
                &format!("pose_mlp/layer{l}"),
                dims[l],
                dims[l + 1],
                rng,
            ));
        }
        layers.push(Linear::zeros(
            params,
            &format!("pose_mlp/layer{}", cfg.pose_layers - 1),
            cfg.pose_hidden_size,
            6,
        ));
        PoseNetwork {
            layers,
            embedding,
            mode,
            n_views,
            initial,
        }
    }

    pub fn layer_in_dims(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.in_dim).collect()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn hidden_size(&self) -> usize {
        self.layers[0].out_dim
    }

    /// The raw 6-vector head output for a camera index, on the tape.
    fn head_graph<T: Real>(&self, tape: &Tape<T>, binding: &Binding, view: usize) -> Value {
        assert!(view < self.n_views, "camera index {view} out of range {}", self.n_views);
        let v = FourierEmbedding::normalize_index(view, self.n_views);
        let emb: Vec<T> = self
            .embedding
            .embed(v)
            .into_iter()
            .map(T::from_f64)
            .collect();
        let mut h = tape.constant(Tensor::new(vec![1, emb.len()], emb));
        for (l, layer) in self.layers.iter().enumerate() {
            h = layer.forward_graph(tape, binding, h);
            if l + 1 < self.layers.len() {
                h = tape.gelu(h);
            }
        }
        h
    }

    /// Differentiable pose of a camera.
    pub fn eval_graph<T: Real>(&self, tape: &Tape<T>, binding: &Binding, view: usize) -> PoseGraph {
        let out = self.head_graph(tape, binding, view); // [1,6]
        let r_axis = tape.slice_cols(out, 0, 3);
        let t_delta = tape.slice_cols(out, 3, 6);
        let r_mat = tape.rodrigues(r_axis);
        match self.mode {
            PoseMode::Absolute => PoseGraph {
                r: r_mat,
                t: t_delta,
            },
            PoseMode::Delta | PoseMode::FrozenGt => {
                let init = &self.initial[view];
                let r0: Vec<T> = init.r.iter().flatten().map(|&v| T::from_f64(v)).collect();
                let t0: Vec<T> = init.t.iter().map(|&v| T::from_f64(v)).collect();
                let r0 = tape.constant(Tensor::new(vec![3, 3], r0));
                let t0 = tape.constant(Tensor::new(vec![1, 3], t0));
                // T = delta ∘ T0: R = R_d R0, t = R_d t0 + t_d
                let r = tape.matmul(r_mat, r0);
                let rt0 = tape.matmul(t0, tape.transpose(r_mat));
                PoseGraph {
                    r,
                    t: tape.add(rt0, t_delta),
                }
            }
        }
    }

    /// Pose values (f64) for export / evaluation.
    pub fn eval_pose<T: Real>(&self, params: &ParameterSet<T>, view: usize) -> Pose {
        let tape = Tape::<T>::new();
        let binding = Binding::bind_constants(&tape, params);
        let g = self.eval_graph(&tape, &binding, view);
        let r = tape.value(g.r);
        let t = tape.value(g.t);
        let mut rm = [[0.0f64; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rm[i][j] = r.data()[i * 3 + j].to_f64();
            }
        }
        Pose {
            r: rm,
            t: [
                t.data()[0].to_f64(),
                t.data()[1].to_f64(),
                t.data()[2].to_f64(),
            ],
        }
    }
}
