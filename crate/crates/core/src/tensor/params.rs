use std::sync::Arc;

use rand::Rng;

use super::Array;
use crate::error::{Error, Result};

/// Handle to one trainable tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    value: Arc<Array>,
    grad: Array,
}

/// Ordered, named collection of model parameters with gradient buffers.
///
/// Values are shared copy-on-write with any live tape, so binding a
/// parameter for a forward pass does not copy it.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        let grad = Array::zeros(value.shape());
        self.entries.push(Entry {
            name,
            value: Arc::new(value),
            grad,
        });
        ParamId(self.entries.len() - 1)
    }

    /// Xavier-uniform initialised matrix (or stack of matrices).
    pub fn add_xavier(&mut self, name: impl Into<String>, shape: &[usize], rng: &mut impl Rng) -> ParamId {
        let rank = shape.len();
        let fan_in = shape[rank.saturating_sub(2)];
        let fan_out = shape[rank - 1];
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let value = Array::from_fn(shape, |_| rng.gen_range(-limit..limit));
        self.add(name, value)
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

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Array {
        &self.entries[id.0].value
    }

    pub(crate) fn shared(&self, id: ParamId) -> Arc<Array> {
        Arc::clone(&self.entries[id.0].value)
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array {
        Arc::make_mut(&mut self.entries[id.0].value)
    }

    pub fn grad(&self, id: ParamId) -> &Array {
        &self.entries[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Array {
        &mut self.entries[id.0].grad
    }

    /// Mutable access to a value and its gradient at once.
    pub fn value_and_grad_mut(&mut self, id: ParamId) -> (&mut Array, &Array) {
        let entry = &mut self.entries[id.0];
        (Arc::make_mut(&mut entry.value), &entry.grad)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(0.0);
        }
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    /// Replaces a value, requiring the shape to match.
    pub fn set(&mut self, id: ParamId, value: Array) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.value.shape() != value.shape() {
            return Err(Error::shape("ParamStore::set", entry.value.shape(), value.shape()));
        }
        entry.value = Arc::new(value);
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.value.is_finite())
    }
}
