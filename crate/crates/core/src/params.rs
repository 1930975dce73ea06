//! Named parameter registry shared by the model, optimizer, and checkpoints.

use alloc::string::String;
use alloc::vec::Vec;

use crate::rng::{self, SeededRng};
use crate::tensor::Tensor;
use crate::fmath;

/// Stable index of a parameter inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    /// Whether the entry counts toward the L2 regularization term
    /// (biases and normalization gains do not).
    pub decay: bool,
}

/// Ordered collection of learnable tensors. Registration order is the
/// canonical order used by the optimizer state and the checkpoint format.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: String, value: Tensor, decay: bool) -> ParamId {
        self.entries.push(ParamEntry { name, value, decay });
        ParamId(self.entries.len() - 1)
    }

    /// Weight tensor initialized uniformly in ±1/sqrt(fan_in).
    pub fn register_uniform(
        &mut self,
        name: String,
        dims: &[usize],
        fan_in: usize,
        rng: &mut SeededRng,
    ) -> ParamId {
        let limit = 1.0 / fmath::sqrt(fan_in.max(1) as f64);
        let value = Tensor::from_fn(dims, |_| rng::uniform_symmetric(rng, limit));
        self.register(name, value, true)
    }

    /// Zero-initialized bias (excluded from weight decay).
    pub fn register_bias(&mut self, name: String, dims: &[usize]) -> ParamId {
        self.register(name, Tensor::zeros(dims), false)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Sum of squared norms over decayed entries (the L2 term).
    pub fn decayed_sq_norm(&self) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.decay)
            .map(|e| e.value.sq_norm())
            .sum()
    }

    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }
}
