use std::collections::HashMap;

use crate::diffcore::tensor::{Element, Tensor};
use crate::error::{config_err, shape_err, Result};

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Entry<T> {
    name: String,
    value: Tensor<T>,
    grad: Vec<T>,
}

/// Named trainable tensors, each with a gradient slot of identical shape,
/// plus the optimizer step counter.
#[derive(Clone, Debug)]
pub struct ParamStore<T = f32> {
    entries: Vec<Entry<T>>,
    by_name: HashMap<String, ParamId>,
    step: u64,
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            by_name: HashMap::new(),
            step: 0,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(config_err!("duplicate parameter name {name:?}"));
        }
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id);
        self.entries.push(Entry {
            name,
            grad: vec![T::zero(); value.len()],
            value,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[T] {
        &self.entries[id.0].grad
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.value.shape() != value.shape() {
            return Err(shape_err!(
                "parameter {} has shape {}, got {}",
                entry.name,
                entry.value.shape(),
                value.shape()
            ));
        }
        entry.value = value;
        Ok(())
    }

    pub fn accumulate_grad(&mut self, id: ParamId, grad: &[T]) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.grad.len() != grad.len() {
            return Err(shape_err!(
                "gradient of length {} for parameter {} of length {}",
                grad.len(),
                entry.name,
                entry.grad.len()
            ));
        }
        for (g, d) in entry.grad.iter_mut().zip(grad) {
            *g = *g + *d;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(T::zero());
        }
    }

    /// Mutable value buffer together with its gradient, for optimizers.
    pub fn value_and_grad_mut(&mut self, id: ParamId) -> (&mut [T], &[T]) {
        let entry = &mut self.entries[id.0];
        (entry.value.data_mut(), &entry.grad)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn bump_step(&mut self) -> u64 {
        self.step += 1;
        self.step
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Same parameters converted to another element type; gradients reset.
    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    grad: vec![U::zero(); e.value.len()],
                })
                .collect(),
            by_name: self.by_name.clone(),
            step: self.step,
        }
    }
}

