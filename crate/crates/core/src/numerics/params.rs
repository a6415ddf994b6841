use std::collections::HashMap;

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Index of a tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Ordered collection of named trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    /// Looks up `name` and checks its shape.
    pub fn expect(&self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let id = self
            .id_of(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
        if self.get(id).shape() != shape {
            return Err(Error::shape("parameter", self.get(id).shape(), shape));
        }
        Ok(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Sum of all parameter values; cheap change detector.
    pub fn checksum(&self) -> f64 {
        self.tensors.iter().map(Tensor::sum).sum()
    }

    /// Euclidean distance between two sets with identical layout.
    pub fn distance(&self, other: &ParamSet) -> f64 {
        self.tensors
            .iter()
            .zip(&other.tensors)
            .flat_map(|(a, b)| a.data().iter().zip(b.data()))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Binding {
        Binding(self.tensors.iter().map(|t| tape.leaf(t.clone())).collect())
    }

    /// Zero tensors shaped like each parameter.
    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.tensors.iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect()
    }
}

/// Tape variables for a [`ParamSet`], in parameter order.
#[derive(Clone, Debug)]
pub struct Binding(Vec<Var>);

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    /// Gradients in parameter order; zeros for unreachable parameters.
    pub fn gradients(&self, grads: &mut Gradients) -> Result<Vec<Tensor>> {
        self.0.iter().map(|&v| grads.take(v)).collect()
    }
}

impl std::ops::Index<ParamId> for Binding {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}
