//! Named trainable parameters and non-trainable running statistics.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{config_err, shape_err, Result};
use crate::ops::BN_MOMENTUM;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// First/second moment estimates and the step counter used by Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub step: u64,
}

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    /// Shared so that forward passes can hold the weights without copying.
    pub value: Arc<Tensor>,
    pub grad: Tensor,
    pub opt: AdamState,
}

impl Parameter {
    fn new(name: String, value: Tensor) -> Self {
        let shape = value.shape();
        Parameter {
            name,
            value: Arc::new(value),
            grad: Tensor::zeros(shape),
            opt: AdamState {
                m: Tensor::zeros(shape),
                v: Tensor::zeros(shape),
                step: 0,
            },
        }
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(config_err!("duplicate parameter name {name}"));
        }
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id);
        self.params.push(Parameter::new(name, value));
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Arc<Tensor> {
        &self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    /// Total number of trainable scalars.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(Parameter::numel).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Replace a parameter's value, keeping its shape.
    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(shape_err!(
                "parameter {} has shape {}, cannot assign {}",
                p.name,
                p.value.shape(),
                value.shape()
            ));
        }
        p.value = Arc::new(value);
        Ok(())
    }
}

/// Per-channel running mean and (biased) variance of a batchnorm site.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    pub fn update(&mut self, batch_mean: &[f64], batch_var: &[f64]) {
        for (r, b) in self.mean.iter_mut().zip(batch_mean) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
        }
        for (r, b) in self.var.iter_mut().zip(batch_var) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BufferId(usize);

/// Batch statistics produced by one training-mode batchnorm evaluation,
/// applied to the running statistics after the forward pass.
#[derive(Clone, Debug)]
pub struct StatUpdate {
    pub id: BufferId,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct BufferStore {
    entries: Vec<(String, RunningStats)>,
    index: HashMap<String, BufferId>,
}

impl BufferStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, channels: usize) -> Result<BufferId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(config_err!("duplicate buffer name {name}"));
        }
        let id = BufferId(self.entries.len());
        self.index.insert(name.clone(), id);
        self.entries.push((name, RunningStats::new(channels)));
        Ok(id)
    }

    pub fn get(&self, id: BufferId) -> &RunningStats {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: BufferId) -> &mut RunningStats {
        &mut self.entries[id.0].1
    }

    pub fn id(&self, name: &str) -> Option<BufferId> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &RunningStats)> {
        self.entries.iter().map(|(n, s)| (n.as_str(), s))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut RunningStats> {
        self.entries.iter_mut().map(|(_, s)| s)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn apply(&mut self, updates: &[StatUpdate]) {
        for u in updates {
            self.entries[u.id.0].1.update(&u.mean, &u.var);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn zero_grad_clears() {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::full(Shape::new(1, 1, 2, 2), 1.0)).unwrap();
        s.get_mut(id).grad = Tensor::full(Shape::new(1, 1, 2, 2), 3.0);
        s.zero_grad();
        assert!(s.get(id).grad.data().iter().all(|&v| v == 0.0));
        assert_eq!(s.get(id).grad.shape(), s.get(id).value.shape());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.add("a", Tensor::scalar(1.0)).unwrap();
        assert!(s.add("a", Tensor::scalar(2.0)).is_err());
    }

    #[test]
    fn running_stats_momentum() {
        let mut r = RunningStats::new(1);
        r.update(&[1.0], &[3.0]);
        assert!((r.mean[0] - 0.1).abs() < 1e-15);
        assert!((r.var[0] - 1.2).abs() < 1e-15);
    }
}
