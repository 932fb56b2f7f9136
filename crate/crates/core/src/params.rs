//! Named parameter tensors, each tagged with the learned block it belongs to.

use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;

use crate::autograd::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub block: String,
    pub value: Tensor,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Param>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tensor.
    ///
    /// # Panics
    /// If `name` is already present.
    pub fn insert(&mut self, name: impl Into<String>, block: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter `{name}`");
        let id = ParamId(self.entries.len());
        self.index.insert(name.clone(), id);
        self.entries.push(Param {
            name,
            block: block.into(),
            value,
        });
        id
    }

    /// Weight drawn uniformly from `[-1/√fan_in, 1/√fan_in]`.
    pub fn uniform(
        &mut self,
        name: impl Into<String>,
        block: &str,
        shape: (usize, usize),
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let value = Array2::from_shape_fn(shape, |_| rng.gen_range(-bound..bound));
        self.insert(name, block, value)
    }

    pub fn zeros(&mut self, name: impl Into<String>, block: &str, shape: (usize, usize)) -> ParamId {
        self.insert(name, block, Array2::zeros(shape))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.id(name).map(|id| &self.entries[id.0])
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let id = self.id(name)?;
        Some(&mut self.entries[id.0].value)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.entries.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    /// Sets every tensor whose name starts with one of `prefixes` to zero.
    pub fn zero_matching(&mut self, prefixes: &[&str]) {
        for p in &mut self.entries {
            if prefixes.iter().any(|pre| p.name.starts_with(pre)) {
                p.value.fill(0.0);
            }
        }
    }

    /// Re-draws every tensor uniformly in `[-scale, scale]`.
    pub fn randomize(&mut self, scale: f64, rng: &mut impl Rng) {
        for p in &mut self.entries {
            p.value.mapv_inplace(|_| rng.gen_range(-scale..scale));
        }
    }

    pub fn zero_grads(&self) -> ParamGrads {
        ParamGrads {
            grads: self.entries.iter().map(|p| Array2::zeros(p.value.dim())).collect(),
        }
    }

    /// Whether `other` has identical names, blocks and shapes in the same order.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.name == b.name && a.block == b.block && a.value.dim() == b.value.dim()
            })
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    grads: Vec<Tensor>,
}

impl ParamGrads {
    pub fn accumulate(&mut self, id: ParamId, g: &Tensor) {
        self.grads[id.0] += g;
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for g in &mut self.grads {
            *g *= k;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId(i), g))
    }
}
