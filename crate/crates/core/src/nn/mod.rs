//! Learnable layers over [`crate::tensor`].
//!
//! Layers hold [`ParamId`]s into a [`ParamStore`] and take the current
//! parameter values as a slice on every call. Passing plain values runs
//! inference; passing the output of [`ParamStore::bind`] records a tape.

mod conv;
mod lstm;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

pub use conv::{Activation, ConvLayer};
pub use lstm::{lstm_cell_step, LstmLayerParams, LstmState, StackedLstm};

use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub frozen: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, frozen: bool) -> ParamId {
        self.entries.push(Param {
            name: name.into(),
            value,
            frozen,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.entries[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|p| p.name == name)
            .map(ParamId)
    }

    /// Replaces the values of parameter `id`; the shape is kept.
    pub fn set_data(&mut self, id: ParamId, data: Vec<f64>) {
        let p = &mut self.entries[id.0];
        assert_eq!(
            data.len(),
            p.value.numel(),
            "parameter {} size changed",
            p.name
        );
        p.value = Tensor::from_parts(p.value.shape().to_vec(), Arc::new(data));
    }

    /// Untracked parameter values, indexable by [`ParamId`].
    pub fn values(&self) -> Vec<Tensor> {
        self.entries.iter().map(|p| p.value.detach()).collect()
    }

    /// Parameter values with every trainable entry registered on `tape`.
    pub fn bind(&self, tape: &Tape) -> Vec<Tensor> {
        self.entries
            .iter()
            .map(|p| {
                if p.frozen {
                    p.value.detach()
                } else {
                    tape.track(&p.value)
                }
            })
            .collect()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|p| p.value.numel()).sum()
    }
}

/// Seeded `U(-1/√fan_in, 1/√fan_in)` initializer.
#[derive(Debug, Clone)]
pub struct FanInUniform {
    rng: ChaCha8Rng,
}

impl FanInUniform {
    pub fn new(seed: u64) -> Self {
        FanInUniform {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn sample(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| self.rng.random_range(-bound..bound))
            .collect();
        Tensor::from_parts(shape.to_vec(), Arc::new(data))
    }
}
