use alloc::string::String;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::math;

/// Handle to one parameter tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Slot {
    pub(crate) name: String,
    pub(crate) value: Tensor,
    #[serde(skip)]
    pub(crate) grad: Option<Tensor>,
    #[serde(skip)]
    pub(crate) first_moment: Option<Tensor>,
    #[serde(skip)]
    pub(crate) second_moment: Option<Tensor>,
    #[serde(default = "default_trainable")]
    pub(crate) trainable: bool,
}

fn default_trainable() -> bool {
    true
}

/// Named parameters with same-shape gradient accumulators and Adam moments.
///
/// Gradient and moment slots are created lazily with the parameter's shape,
/// so a store deserialized from a checkpoint starts with fresh optimizer state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    pub(crate) slots: Vec<Slot>,
    #[serde(default)]
    pub(crate) step: u64,
}

/// Per-parameter gradients produced by [`Tape::backward`](super::Tape::backward).
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    pub(crate) grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.slots.push(Slot {
            name: name.into(),
            value,
            grad: None,
            first_moment: None,
            second_moment: None,
            trainable: true,
        });
        ParamId(self.slots.len() - 1)
    }

    /// Glorot-uniform weight matrix `[fan_in, fan_out]`.
    pub fn add_glorot<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        let limit = math::sqrt(6.0 / (fan_in + fan_out) as f64);
        let data = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
        let value = Tensor::matrix(fan_in, fan_out, data).expect("glorot shape");
        self.add(name, value)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Tensor::zeros(rows, cols))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.slots.iter().map(|s| s.value.len()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.slots.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.slots[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.slots.iter().position(|s| s.name == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.slots[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.slots[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor> {
        self.slots[id.0].grad.as_ref()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Excluded parameters keep receiving gradients but are skipped by the optimizer.
    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.slots[id.0].trainable = trainable;
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.slots[id.0].trainable
    }

    pub fn zero_grad(&mut self) {
        for slot in &mut self.slots {
            slot.grad = None;
        }
    }

    pub fn accumulate(&mut self, grads: &Gradients) {
        for (slot, g) in self.slots.iter_mut().zip(&grads.grads) {
            if let Some(g) = g {
                match &mut slot.grad {
                    Some(acc) => acc.add_assign(g),
                    None => slot.grad = Some(g.clone()),
                }
            }
        }
    }

    /// Copies parameter values from `other`, which must have the same layout.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        if other.slots.len() != self.slots.len() {
            return Err(Error::Shape {
                context: "ParamStore::load_values",
                expected: self.slots.len(),
                found: other.slots.len(),
            });
        }
        for (dst, src) in self.slots.iter_mut().zip(&other.slots) {
            if dst.value.shape() != src.value.shape() || dst.name != src.name {
                return Err(crate::error::config(alloc::format!(
                    "parameter layout mismatch at {}",
                    dst.name
                )));
            }
            dst.value = src.value.clone();
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.slots.iter().all(|s| s.value.is_finite())
    }
}
