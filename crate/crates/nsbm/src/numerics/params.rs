use std::collections::HashMap;

use crate::numerics::tape::{Tape, TapeGrads, ValueId};
use crate::numerics::Tensor;
use crate::{Error, Result};

/// Named trainable arrays, kept in insertion order so that every walk over the
/// parameters (updates, checkpoints, reports) is deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::Data(format!("parameter `{name}` already exists")));
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), tensor.trainable()));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].1)
            .ok_or_else(|| Error::Data(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.entries[i].1),
            None => Err(Error::Data(format!("unknown parameter `{name}`"))),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Per-parameter gradients pulled off a tape, in parameter-store order.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    entries: Vec<(String, Vec<f64>)>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &str, grad: Vec<f64>) {
        self.entries.push((name.to_string(), grad));
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, g)| g.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(n, g)| (n.as_str(), g.as_slice()))
    }

    /// Collects gradients for a set of (name, tape id) bindings. Parameters
    /// that the loss never touched get zero gradients.
    pub fn collect(tape: &Tape, grads: &TapeGrads, bindings: &[(String, ValueId)]) -> Gradients {
        let mut out = Gradients::new();
        for (name, id) in bindings {
            let g = grads
                .get(*id)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; tape.values(*id).len()]);
            out.push(name, g);
        }
        out
    }
}

/// Adaptive-moment gradient descent with bias correction.
///
/// Per-parameter first/second moment accumulators are created lazily on first
/// update; shapes are validated against the parameter store on every step.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. A NaN gradient anywhere aborts the whole step and
    /// names the offending parameter; no parameter is modified in that case.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        for (name, g) in grads.iter() {
            if g.iter().any(|v| v.is_nan()) {
                return Err(Error::Numeric(format!(
                    "NaN gradient for parameter `{name}`; step {} aborted",
                    self.step + 1
                )));
            }
            let p = params.get(name)?;
            if p.numel() != g.len() {
                return Err(Error::Shape(format!(
                    "gradient for `{name}` has {} values, parameter has {}",
                    g.len(),
                    p.numel()
                )));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for (name, g) in grads.iter() {
            let p = params.get_mut(name)?;
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            let values = p.values_mut();
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                values[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
