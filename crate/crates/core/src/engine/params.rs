//! Named parameter storage that outlives any single computation graph.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::rng::Rng;
use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Gradients keyed by parameter name.
pub type Grads = BTreeMap<String, Vec<f64>>;

/// Parameters by unique name, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    entries: BTreeMap<String, Param>,
}

impl ParamSet {
    pub fn insert(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        if numel(&shape) != data.len() {
            return Err(Error::Shape(format!("`{name}`: shape {shape:?} vs {} values", data.len())));
        }
        if self.entries.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        self.entries.insert(name.to_string(), Param { shape, data });
        Ok(())
    }

    /// Kaiming-uniform (fan-in) weights: U(-√(6/fan_in), √(6/fan_in)).
    pub fn insert_kaiming(&mut self, name: &str, shape: Vec<usize>, fan_in: usize, rng: &mut Rng) -> Result<()> {
        let bound = (6.0 / fan_in as f64).sqrt();
        let data = (0..numel(&shape)).map(|_| rng.uniform_range(-bound, bound)).collect();
        self.insert(name, shape, data)
    }

    pub fn insert_const(&mut self, name: &str, shape: Vec<usize>, value: f64) -> Result<()> {
        let n = numel(&shape);
        self.insert(name, shape, vec![value; n])
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar values.
    pub fn count(&self) -> usize {
        self.entries.values().map(|p| p.data.len()).sum()
    }

    /// Leaf tensors for one graph. `trainable` controls gradient tracking.
    pub fn bind(&self, trainable: bool) -> Bound {
        let tensors = self
            .entries
            .iter()
            .map(|(k, p)| {
                let t = Tensor::raw(p.shape.clone(), p.data.clone(), trainable);
                (k.clone(), t)
            })
            .collect();
        Bound { tensors }
    }
}

/// Graph leaves created from a [`ParamSet`].
pub struct Bound {
    tensors: BTreeMap<String, Tensor>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    /// Collects the accumulated leaf gradients.
    pub fn grads(&self) -> Grads {
        self.tensors
            .iter()
            .filter_map(|(k, t)| t.grad().map(|g| (k.clone(), g.clone())))
            .collect()
    }
}
