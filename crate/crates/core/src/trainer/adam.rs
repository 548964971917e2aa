//! ADAM with bias correction; one moment pair per parameter.

use std::path::Path;

use crate::autodiff::{checkpoint, ParamId, ParameterSet, Tensor};
use crate::num::Real;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

pub struct AdamState<T: Real> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    pub step: usize,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParameterSet<T>) -> Self {
        let m = params
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.shape().to_vec()))
            .collect::<Vec<_>>();
        let v = m.clone();
        AdamState { m, v, step: 0 }
    }

    /// One update over all parameters; `lr_of` yields the effective learning
    /// rate per parameter (base rate x warm-up x group multiplier; 0 freezes).
    pub fn update(&mut self, params: &mut ParameterSet<T>, lr_of: impl Fn(ParamId, &str) -> f64) {
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from_f64(ADAM_BETA1);
        let b2 = T::from_f64(ADAM_BETA2);
        let eps = T::from_f64(ADAM_EPS);
        let bc1 = T::from_f64(1.0 - ADAM_BETA1.powi(t));
        let bc2 = T::from_f64(1.0 - ADAM_BETA2.powi(t));
        let ids: Vec<ParamId> = params.iter().map(|(id, _)| id).collect();
        for id in ids {
            let lr = {
                let p = params.get(id);
                lr_of(id, &p.name)
            };
            if lr == 0.0 {
                continue;
            }
            let lr = T::from_f64(lr);
            let p = params.get_mut(id);
            let m = self.m[id.0].data_mut();
            let v = self.v[id.0].data_mut();
            for ((theta, g), (mi, vi)) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = b1 * *mi + (T::ONE - b1) * *g;
                *vi = b2 * *vi + (T::ONE - b2) * *g * *g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }

    /// Persist moments (checkpoint format with m./v. prefixes) for exact
    /// resume.
    pub fn save(&self, params: &ParameterSet<T>, path: &Path) -> Result<(), checkpoint::CheckpointError> {
        let mut set = ParameterSet::<T>::new();
        for (id, p) in params.iter() {
            set.register(&format!("m.{}", p.name), self.m[id.0].clone());
        }
        for (id, p) in params.iter() {
            set.register(&format!("v.{}", p.name), self.v[id.0].clone());
        }
        checkpoint::save(&set, path)
    }

    pub fn load(
        &mut self,
        params: &ParameterSet<T>,
        path: &Path,
        step: usize,
    ) -> Result<(), checkpoint::CheckpointError> {
        let entries = checkpoint::load_raw(path)?;
        let by_name: std::collections::BTreeMap<String, (Vec<usize>, Vec<f64>)> = entries
            .into_iter()
            .map(|(n, s, d)| (n, (s, d)))
            .collect();
        for (id, p) in params.iter() {
            for (prefix, slot) in [("m.", &mut self.m[id.0]), ("v.", &mut self.v[id.0])] {
                let key = format!("{prefix}{}", p.name);
                let (shape, data) = by_name.get(&key).ok_or_else(|| {
                    checkpoint::CheckpointError::MissingParam {
                        file: path.display().to_string(),
                        name: key.clone(),
                    }
                })?;
                *slot = Tensor::new(shape.clone(), data.iter().map(|&v| T::from_f64(v)).collect());
            }
        }
        self.step = step;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Canonical-update oracle: a hand-rolled scalar ADAM on a 1-parameter
    /// quadratic must match the implementation and converge.
    #[test]
    fn matches_scalar_oracle_and_converges_on_quadratic() {
        let mut params = ParameterSet::<f64>::new();
        let id = params.register("x", Tensor::scalar(3.0));
        let mut adam = AdamState::new(&params);

        // oracle state
        let (mut xo, mut mo, mut vo) = (3.0f64, 0.0f64, 0.0f64);
        let lr = 0.05;
        for t in 1..=2000 {
            // f(x) = (x - 1)^2, grad = 2(x-1)
            let g = 2.0 * (params.get(id).value.item() - 1.0);
            params.get_mut(id).grad = Tensor::scalar(g);
            adam.update(&mut params, |_, _| lr);

            let go = 2.0 * (xo - 1.0);
            mo = ADAM_BETA1 * mo + (1.0 - ADAM_BETA1) * go;
            vo = ADAM_BETA2 * vo + (1.0 - ADAM_BETA2) * go * go;
            let mh = mo / (1.0 - ADAM_BETA1.powi(t));
            let vh = vo / (1.0 - ADAM_BETA2.powi(t));
            xo -= lr * mh / (vh.sqrt() + ADAM_EPS);

            assert!(
                (params.get(id).value.item() - xo).abs() < 1e-12,
                "diverged from oracle at step {t}"
            );
        }
        assert!(
            (params.get(id).value.item() - 1.0).abs() < 1e-6,
            "did not converge: {}",
            params.get(id).value.item()
        );
    }

    #[test]
    fn zero_lr_freezes_parameter() {
        let mut params = ParameterSet::<f64>::new();
        let id = params.register("frozen", Tensor::scalar(2.0));
        let mut adam = AdamState::new(&params);
        params.get_mut(id).grad = Tensor::scalar(10.0);
        adam.update(&mut params, |_, _| 0.0);
        assert_eq!(params.get(id).value.item(), 2.0);
    }
}
