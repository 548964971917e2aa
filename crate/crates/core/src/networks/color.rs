//! Radiance network: g(x, v, n, z) -> rgb in (0,1)^3.
//!
//! 4 hidden layers of 256 with ReLU, sigmoid output head. The view direction
//! arrives positionally encoded (4 frequencies, coarse-to-fine masked).

use crate::autodiff::{Binding, ParameterSet, Tape, Value};
use crate::encoding::encoded_dim;
use crate::num::Real;
use crate::rngs::DetRng;

use super::mlp::Linear;
use super::NetworkConfig;

pub struct ColorNetwork {
    layers: Vec<Linear>,
    head: Linear,
    pub num_freqs_dir: usize,
}

impl ColorNetwork {
    pub fn new<T: Real>(params: &mut ParameterSet<T>, cfg: &NetworkConfig, rng: &mut DetRng) -> Self {
        let dir_dim = encoded_dim(3, cfg.num_freqs_direction, true);
        let in_dim = 3 + dir_dim + 3 + cfg.n_features;
        let h = cfg.color_hidden_size;
        let mut layers = Vec::with_capacity(cfg.color_hidden_layers);
        for l in 0..cfg.color_hidden_layers {
            let li = if l == 0 { in_dim } else { h };
            layers.push(Linear::kaiming(
                params,
                &format!("color_mlp/layer{l}"),
                li,
                h,
                rng,
            ));
        }
        let head = Linear::kaiming(params, "color_mlp/head", h, 3, rng);
        ColorNetwork {
            layers,
            head,
            num_freqs_dir: cfg.num_freqs_direction,
        }
    }

    pub fn layer_in_dims(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.layers.iter().map(|l| l.in_dim).collect();
        v.push(self.head.in_dim);
        v
    }

    pub fn hidden_size(&self) -> usize {
        self.layers[0].out_dim
    }

    pub fn num_hidden_layers(&self) -> usize {
        self.layers.len()
    }

    /// x [n,3], dir_enc [n, enc], normals [n,3], features [n, nf] -> rgb [n,3].
    pub fn eval_graph<T: Real>(
        &self,
        tape: &Tape<T>,
        binding: &Binding,
        x: Value,
        dir_enc: Value,
        normals: Value,
        features: Value,
    ) -> Value {
        let mut h = tape.concat_cols(&[x, dir_enc, normals, features]);
        for layer in &self.layers {
            h = tape.relu(layer.forward_graph(tape, binding, h));
        }
        tape.sigmoid(self.head.forward_graph(tape, binding, h))
    }
}
