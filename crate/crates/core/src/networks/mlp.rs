//! Linear layers over the tape. No-grad paths (importance sampling, marching
//! cubes, rendering) evaluate the same graph code with constant-bound
//! parameters, so trained and plain values agree bitwise.

use crate::autodiff::{Binding, ParamId, ParameterSet, Tape, Tensor, Value};
use crate::num::Real;
use crate::rngs::{normal, DetRng};
use rand::Rng;

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Kaiming-style uniform fan-in init: U(-sqrt(6/in), sqrt(6/in)), zero bias.
    pub fn kaiming<T: Real>(
        params: &mut ParameterSet<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut DetRng,
    ) -> Self {
        let bound = (6.0 / in_dim as f64).sqrt();
        let w: Vec<T> = (0..in_dim * out_dim)
            .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
            .collect();
        Self::register(params, name, in_dim, out_dim, w, vec![T::ZERO; out_dim])
    }

    /// All-zero layer (pose head: zero output at init by construction).
    pub fn zeros<T: Real>(
        params: &mut ParameterSet<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        Self::register(
            params,
            name,
            in_dim,
            out_dim,
            vec![T::ZERO; in_dim * out_dim],
            vec![T::ZERO; out_dim],
        )
    }

    /// Gaussian init with per-column zero masks (geometric initialization
    /// pieces); `zero_cols` are input columns whose weights start at zero.
    pub fn gaussian_masked<T: Real>(
        params: &mut ParameterSet<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        mean: f64,
        std: f64,
        zero_cols: &[std::ops::Range<usize>],
        bias: f64,
        rng: &mut DetRng,
    ) -> Self {
        let mut w = vec![T::ZERO; in_dim * out_dim];
        for ic in 0..in_dim {
            let zeroed = zero_cols.iter().any(|r| r.contains(&ic));
            for oc in 0..out_dim {
                if !zeroed {
                    w[ic * out_dim + oc] = T::from_f64(mean + std * normal(rng));
                }
            }
        }
        Self::register(
            params,
            name,
            in_dim,
            out_dim,
            w,
            vec![T::from_f64(bias); out_dim],
        )
    }

    fn register<T: Real>(
        params: &mut ParameterSet<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        w: Vec<T>,
        b: Vec<T>,
    ) -> Self {
        let w = params.register(&format!("{name}/weight"), Tensor::new(vec![in_dim, out_dim], w));
        let b = params.register(&format!("{name}/bias"), Tensor::new(vec![out_dim], b));
        Linear {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn forward_graph<T: Real>(&self, tape: &Tape<T>, binding: &Binding, x: Value) -> Value {
        tape.add(tape.matmul(x, binding.leaf(self.w)), binding.leaf(self.b))
    }

    /// Tangent propagation: bias drops out of the derivative.
    pub fn tangent_graph<T: Real>(&self, tape: &Tape<T>, binding: &Binding, xt: Value) -> Value {
        tape.matmul(xt, binding.leaf(self.w))
    }

}
