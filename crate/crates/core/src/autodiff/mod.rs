//! Reverse-mode differentiation over small dense matrices.
//!
//! A [`Graph`] records operations against a borrowed [`ParamStore`]. Values
//! are produced by [`Graph::evaluate`] and parameter gradients by
//! [`Graph::gradient`]; both are pure functions of the graph, the parameters
//! and the placeholder bindings. Every tensor is a row-major `f64` matrix;
//! scalars are `1x1` and vectors are single rows.

mod adam;
mod checkpoint;
mod graph;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_params, read_params, save_params, write_params, CHECKPOINT_VERSION};
pub use graph::{Bindings, Graph, GraphError, NodeId, Op, Values, BCE_CLAMP, LAYER_NORM_EPS};

use std::collections::BTreeMap;

use ndarray::Array2;

/// Dense row-major matrix used for every value in the graph.
pub type Tensor = Array2<f64>;

/// Gradients keyed by parameter name.
pub type Grads = BTreeMap<String, Tensor>;

/// Named trainable tensors. Iteration order is the lexicographic name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a parameter. Returns the previous tensor if the name was taken.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Option<Tensor> {
        self.tensors.insert(name.into(), value)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of scalar entries across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    /// Zero tensors shaped like every parameter.
    pub fn zero_grads(&self) -> Grads {
        self.tensors
            .iter()
            .map(|(k, v)| (k.clone(), Tensor::zeros(v.raw_dim())))
            .collect()
    }
}

/// Adds `src` into `dst` name by name, in name order.
pub fn accumulate_grads(dst: &mut Grads, src: &Grads) {
    for (name, g) in src {
        match dst.get_mut(name) {
            Some(acc) => *acc += g,
            None => {
                dst.insert(name.clone(), g.clone());
            }
        }
    }
}

/// Multiplies every gradient by `factor`.
pub fn scale_grads(grads: &mut Grads, factor: f64) {
    for g in grads.values_mut() {
        g.mapv_inplace(|x| x * factor);
    }
}
