//! First-order optimizers over named parameter tensors.
//!
//! A step reads each parameter's accumulated gradient and replaces the leaf
//! with an updated one; per-parameter state is keyed by name so checkpoints
//! can restore it exactly.

use std::collections::BTreeMap;

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    SgdMomentum,
}

impl OptimizerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::SgdMomentum => "sgd-momentum",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "adam" => Some(OptimizerKind::Adam),
            "sgd-momentum" | "sgd" => Some(OptimizerKind::SgdMomentum),
            _ => None,
        }
    }
}

struct ParamState {
    m: Vec<f64>,
    v: Vec<f64>,
}

pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub momentum: f64,
    step_count: u64,
    state: BTreeMap<String, ParamState>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, momentum: f64) -> Self {
        Optimizer {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            momentum,
            step_count: 0,
            state: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update over every parameter the visitor yields. Parameters with
    /// no accumulated gradient see a zero gradient.
    pub fn step(&mut self, for_each: impl FnOnce(&mut dyn FnMut(String, &mut Tensor))) {
        self.step_count += 1;
        let t = self.step_count;
        let (kind, lr, beta1, beta2, eps, momentum) =
            (self.kind, self.lr, self.beta1, self.beta2, self.eps, self.momentum);
        let state = &mut self.state;
        for_each(&mut |name, tensor| {
            let grad = tensor.grad_or_zeros();
            let entry = state
                .entry(name)
                .or_insert_with(|| ParamState { m: vec![0.0; grad.len()], v: vec![0.0; grad.len()] });
            let mut data = tensor.data().to_vec();
            match kind {
                OptimizerKind::Adam => {
                    let bc1 = 1.0 - beta1.powi(t as i32);
                    let bc2 = 1.0 - beta2.powi(t as i32);
                    for i in 0..data.len() {
                        let g = grad[i];
                        entry.m[i] = beta1 * entry.m[i] + (1.0 - beta1) * g;
                        entry.v[i] = beta2 * entry.v[i] + (1.0 - beta2) * g * g;
                        let m_hat = entry.m[i] / bc1;
                        let v_hat = entry.v[i] / bc2;
                        data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
                OptimizerKind::SgdMomentum => {
                    for i in 0..data.len() {
                        entry.m[i] = momentum * entry.m[i] + grad[i];
                        data[i] -= lr * entry.m[i];
                    }
                }
            }
            *tensor = Tensor::parameter(data, tensor.shape()).expect("shape preserved");
        });
    }

    /// Flat state entries for checkpointing, ordered by parameter name.
    pub fn state_entries(&self) -> Vec<(String, Vec<f64>)> {
        let mut out = Vec::with_capacity(self.state.len() * 2);
        for (name, s) in &self.state {
            out.push((format!("m.{name}"), s.m.clone()));
            out.push((format!("v.{name}"), s.v.clone()));
        }
        out
    }

    pub fn restore_state(&mut self, step_count: u64, entries: &[(String, Vec<f64>)]) {
        self.step_count = step_count;
        self.state.clear();
        for (key, values) in entries {
            if let Some(name) = key.strip_prefix("m.") {
                self.state
                    .entry(name.to_string())
                    .or_insert_with(|| ParamState { m: Vec::new(), v: Vec::new() })
                    .m = values.clone();
            } else if let Some(name) = key.strip_prefix("v.") {
                self.state
                    .entry(name.to_string())
                    .or_insert_with(|| ParamState { m: Vec::new(), v: Vec::new() })
                    .v = values.clone();
            }
        }
    }
}
