//! Named parameter storage and initialization.

use super::scalar::Scalar;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Result, SsmError};
use rand::Rng;
use std::collections::BTreeMap;

/// A map from parameter name to tensor. Iteration is ordered by name, so
/// gradient collection, optimizer sweeps, and serialization are all
/// deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Scalar> {
    map: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            map: BTreeMap::new(),
        }
    }

    /// Registers a tensor under a unique name.
    pub fn insert(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        if self.map.contains_key(name) {
            return Err(SsmError::Argument(format!(
                "parameter {name:?} registered twice"
            )));
        }
        self.map.insert(name.to_string(), tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.map
            .get(name)
            .ok_or_else(|| SsmError::Argument(format!("unknown parameter {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.map
            .get_mut(name)
            .ok_or_else(|| SsmError::Argument(format!("unknown parameter {name:?}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalar entries across all parameters.
    pub fn numel(&self) -> usize {
        self.map.values().map(Tensor::numel).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    /// Creates one tape leaf per parameter for a forward pass.
    pub fn leaves(&self, tape: &Tape<T>) -> BTreeMap<String, Var<T>> {
        self.map
            .iter()
            .map(|(name, tensor)| (name.clone(), tape.leaf(tensor.clone())))
            .collect()
    }
}

/// Uniform init in `±√(6/(fan_in+fan_out))` for a `rows×cols` weight where
/// `cols` is the input width.
pub fn glorot_uniform<T: Scalar, R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| T::of(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::from_parts(vec![rows, cols], data)
}
