//! Named trainable parameters and their persistent gradient accumulators.

use std::collections::BTreeMap;

use super::tape::{Tape, Value};
use super::tensor::Tensor;
use crate::num::Real;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ParamId(pub usize);

pub struct Parameter<T: Real> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Registry of all trainable state. Names are unique path-like strings
/// (e.g. "sdf_mlp/layer3/weight"); registration order is the canonical
/// (deterministic) iteration order everywhere.
pub struct ParameterSet<T: Real> {
    params: Vec<Parameter<T>>,
    by_name: BTreeMap<String, usize>,
}

impl<T: Real> Default for ParameterSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParameterSet<T> {
    pub fn new() -> Self {
        ParameterSet {
            params: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "parameter name registered twice: {name}"
        );
        let grad = Tensor::zeros(value.shape().to_vec());
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad,
        });
        self.by_name.insert(name.to_string(), self.params.len() - 1);
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.by_name.get(name).map(|&i| &self.params[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::ZERO);
        }
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }
}

/// Per-step mapping from every parameter to its leaf node on a fresh tape.
pub struct Binding {
    leaves: Vec<Value>,
}

impl Binding {
    /// Register every parameter as a leaf on `tape`, in canonical order.
    pub fn bind_all<T: Real>(tape: &Tape<T>, params: &ParameterSet<T>) -> Self {
        let leaves = params
            .params
            .iter()
            .map(|p| tape.leaf(p.value.clone()))
            .collect();
        Binding { leaves }
    }

    /// Bind parameters as constants: same graph code, no gradient bookkeeping.
    /// Used by every no-grad evaluation path.
    pub fn bind_constants<T: Real>(tape: &Tape<T>, params: &ParameterSet<T>) -> Self {
        let leaves = params
            .params
            .iter()
            .map(|p| tape.constant(p.value.clone()))
            .collect();
        Binding { leaves }
    }

    pub fn leaf(&self, id: ParamId) -> Value {
        self.leaves[id.0]
    }

    /// Add the tape gradients of the last backward into the persistent
    /// parameter accumulators (gradient accumulation semantics).
    pub fn accumulate_grads<T: Real>(&self, tape: &Tape<T>, params: &mut ParameterSet<T>) {
        for (i, &leaf) in self.leaves.iter().enumerate() {
            if let Some(g) = tape.grad(leaf) {
                let p = &mut params.params[i];
                for (acc, &gv) in p.grad.data_mut().iter_mut().zip(g.data()) {
                    *acc += gv;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    #[should_panic(expected = "registered twice")]
    fn duplicate_names_rejected() {
        let mut set = ParameterSet::<f64>::new();
        set.register("w", Tensor::zeros(vec![2]));
        set.register("w", Tensor::zeros(vec![2]));
    }

    #[test]
    fn clear_on_empty_set_is_noop() {
        let mut set = ParameterSet::<f64>::new();
        set.clear_grads();
        assert!(set.is_empty());
    }
}
