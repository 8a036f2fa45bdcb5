//! Trainable parameters and the Adam optimizer.

use super::Tensor;
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// First moment estimate.
    pub m: Tensor,
    /// Second moment estimate.
    pub v: Tensor,
    pub t: u64,
}

impl Parameter {
    fn new(name: String, value: Tensor) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Self {
            name,
            grad: zeros.clone(),
            m: zeros.clone(),
            v: zeros,
            value,
            t: 0,
        }
    }
}

/// Named, ordered collection of parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Parameter::new(name.into(), value));
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &Tensor) {
        self.params[id.0].grad.add_assign(g);
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update on every parameter, then zeroes the
/// gradients. If any gradient is non-finite nothing is updated.
pub fn adam_step(store: &mut ParamStore, cfg: &AdamConfig) -> Result<()> {
    for p in &store.params {
        if p.grad.first_non_finite().is_some() {
            return Err(Error::NonFinite(format!("gradient of parameter `{}`", p.name)));
        }
    }
    for p in &mut store.params {
        p.t += 1;
        let t = p.t as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let grad = p.grad.data();
        let m = p.m.data_mut();
        for (mi, &g) in m.iter_mut().zip(grad) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
        }
        let v = p.v.data_mut();
        for (vi, &g) in v.iter_mut().zip(grad) {
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
        }
        let (m, v) = (p.m.data(), p.v.data());
        for ((w, &mi), &vi) in p.value.data_mut().iter_mut().zip(m).zip(v) {
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        p.grad.data_mut().fill(0.0);
    }
    Ok(())
}
