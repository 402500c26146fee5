//! Named parameter storage with gradient accumulators and AdamW moments.

use std::collections::BTreeMap;

use crate::graph::{Gradients, Graph, NodeId};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub(crate) struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub m: Tensor,
    pub v: Tensor,
}

/// Decoupled-weight-decay Adam hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-4, weight_decay: 0.01, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Registration-ordered named parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    pub(crate) params: Vec<Param>,
    index: BTreeMap<String, usize>,
    pub step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        let shape = value.shape.clone();
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
        });
    }

    pub fn get(&self, name: &str) -> &Tensor {
        let idx = *self.index.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        &self.params[idx].value
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        let idx = *self.index.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        &mut self.params[idx].value
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Binds the parameter into a graph as a named differentiable leaf.
    pub fn bind(&self, g: &mut Graph, name: &str) -> NodeId {
        g.param(name, self.get(name).clone())
    }

    /// Accumulates gradients from a finished backward pass into the store,
    /// matching bound parameter names.
    pub fn accumulate(&mut self, g: &Graph, grads: &Gradients) {
        for (name, node) in g.bound_params() {
            if let Some(grad) = grads.get(*node) {
                let idx = self.index[name];
                self.params[idx].grad.add_in_place(grad);
            }
        }
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for p in &mut self.params {
            for g in &mut p.grad.data {
                *g *= factor;
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data.fill(0.0);
        }
    }

    pub fn grads_finite(&self) -> bool {
        self.params.iter().all(|p| p.grad.all_finite())
    }

    /// One decoupled-weight-decay Adam update; gradients are zeroed after.
    pub fn adamw_step(&mut self, cfg: &AdamWConfig) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for p in &mut self.params {
            for i in 0..p.value.data.len() {
                let g = p.grad.data[i];
                p.m.data[i] = cfg.beta1 * p.m.data[i] + (1.0 - cfg.beta1) * g;
                p.v.data[i] = cfg.beta2 * p.v.data[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = p.m.data[i] / bc1;
                let v_hat = p.v.data[i] / bc2;
                p.value.data[i] -=
                    cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * p.value.data[i]);
            }
            p.grad.data.fill(0.0);
        }
    }
}
