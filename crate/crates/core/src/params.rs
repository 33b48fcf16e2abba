//! Named parameter storage shared by layers, the optimizer, and checkpoints.
//!
//! A [`ParamSet`] maps dotted names (e.g. `"dfa.0.edge.w"`) to tensors.
//! Trainable entries carry gradient and momentum slots; non-trainable entries
//! ("buffers", e.g. batch-norm running statistics) are updated directly by the
//! layers that own them. Iteration order is the name's lexicographic order,
//! which makes serialization and parameter counting deterministic.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::value::Value;

#[derive(Debug, Clone)]
pub struct ParamEntry<S: Scalar> {
    pub value: Value<S>,
    /// Accumulated gradient; `None` until the first accumulation after a zero.
    pub grad: Option<Value<S>>,
    /// Momentum buffer; present (zero-initialized) iff the entry is trainable.
    pub momentum: Option<Value<S>>,
    pub trainable: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamSet<S: Scalar> {
    entries: BTreeMap<String, ParamEntry<S>>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        ParamSet {
            entries: BTreeMap::new(),
        }
    }

    /// Registers a trainable tensor. Names must be unique.
    pub fn register_trainable(&mut self, name: &str, value: Value<S>) -> Result<()> {
        self.register(name, value, true)
    }

    /// Registers a non-trainable buffer (updated by layers, saved in checkpoints,
    /// ignored by the optimizer).
    pub fn register_buffer(&mut self, name: &str, value: Value<S>) -> Result<()> {
        self.register(name, value, false)
    }

    fn register(&mut self, name: &str, value: Value<S>, trainable: bool) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::Config(format!("parameter '{name}' registered twice")));
        }
        let momentum = trainable.then(|| Value::zeros(value.shape()));
        self.entries.insert(
            name.to_string(),
            ParamEntry {
                value,
                grad: None,
                momentum,
                trainable,
            },
        );
        Ok(())
    }

    pub fn entry(&self, name: &str) -> Result<&ParamEntry<S>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))
    }

    pub fn entry_mut(&mut self, name: &str) -> Result<&mut ParamEntry<S>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Entries in lexicographic name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry<S>)> {
        self.entries.iter().map(|(n, e)| (n.as_str(), e))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamEntry<S>)> {
        self.entries.iter_mut().map(|(n, e)| (n.as_str(), e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across trainable entries.
    pub fn num_trainable_scalars(&self) -> usize {
        self.entries
            .values()
            .filter(|e| e.trainable)
            .map(|e| e.value.numel())
            .sum()
    }

    /// Drops all accumulated gradients.
    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad = None;
        }
    }

    /// Adds `grad` into the entry's gradient accumulator (creating it at zero).
    pub fn accumulate_grad(&mut self, name: &str, grad: &[S]) -> Result<()> {
        let e = self.entry_mut(name)?;
        if grad.len() != e.value.numel() {
            return Err(Error::shape(
                format!("gradient for '{name}'"),
                format!("{} elements", e.value.numel()),
                format!("{} elements", grad.len()),
            ));
        }
        let acc = e
            .grad
            .get_or_insert_with(|| Value::zeros(e.value.shape()));
        for (a, &g) in acc.data_mut().iter_mut().zip(grad) {
            *a += g;
        }
        Ok(())
    }
}
