//! Named parameter tensors and their binding onto a [`Graph`].

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{Grads, Graph, Var};
use crate::tensor::Tensor;

/// Parameters keyed by their flat dotted name, e.g. `layer03.attn.qkv.weight`.
/// Iteration is in key order, which fixes every accumulation order that
/// walks the store.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    map: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Option<Tensor> {
        self.map.insert(name.into(), value)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.map
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.map.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.map.remove(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.map.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn extend(&mut self, other: ParamStore) {
        self.map.extend(other.map);
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.map.values().map(Tensor::len).sum()
    }

    /// Adds every parameter to `graph` as a gradient-carrying leaf.
    pub fn bind(&self, graph: &mut Graph) -> VarMap {
        VarMap {
            map: self
                .map
                .iter()
                .map(|(k, v)| (k.clone(), graph.param(v.clone())))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct VarMap {
    map: BTreeMap<String, Var>,
}

impl VarMap {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.map
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, var: Var) {
        self.map.insert(name.into(), var);
    }

    /// Gradient per parameter name; parameters the loss does not reach get
    /// zeros.
    pub fn collect_grads(&self, graph: &Graph, grads: &mut Grads) -> ParamStore {
        let mut out = ParamStore::new();
        for (name, &var) in &self.map {
            let g = grads
                .take(var)
                .unwrap_or_else(|| Tensor::zeros(graph.value(var).shape()));
            out.insert(name.clone(), g);
        }
        out
    }
}
