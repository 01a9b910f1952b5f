//! Named parameter storage.
//!
//! Model structs hold [`ParamId`]s; the values live in a [`ParamSet`]. A
//! forward pass first binds the whole set into a graph, which makes it cheap
//! to keep several congruent copies (query and key encoders, optimizer
//! moments) of one architecture.

use std::ops::Index;

use crate::autodiff::{Gradients, Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalars across all tensors.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Same names and shapes, in the same order.
    pub fn check_congruent<U: Scalar>(&self, other: &ParamSet<U>) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::dim(format!(
                "parameter sets differ in size: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        for ((na, a), (nb, b)) in self.iter().zip(other.iter()) {
            if na != nb || a.shape() != b.shape() {
                return Err(Error::dim(format!(
                    "parameter mismatch: {na} {:?} vs {nb} {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
        }
    }

    /// Zero tensors congruent with this set.
    pub fn zeros_like(&self) -> ParamSet<T> {
        ParamSet {
            names: self.names.clone(),
            values: self.values.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    /// Inserts every tensor into `g` as a leaf.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        Bound {
            vars: self.values.iter().map(|t| g.leaf(t.clone(), trainable)).collect(),
        }
    }

    /// Overwrites values by name from `(name, tensor)` records; every
    /// parameter must be present with a matching shape.
    pub fn load_from<'a, U: Scalar>(
        &mut self,
        records: impl IntoIterator<Item = (&'a str, &'a Tensor<U>)>,
        prefix: &str,
    ) -> Result<()> {
        let mut seen = vec![false; self.len()];
        for (name, t) in records {
            let Some(local) = name.strip_prefix(prefix) else { continue };
            let Some(id) = self.find(local) else { continue };
            if self.values[id.0].shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "{name}: expected shape {:?}, found {:?}",
                    self.values[id.0].shape(),
                    t.shape()
                )));
            }
            self.values[id.0] = t.cast();
            seen[id.0] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Checkpoint(format!("missing parameter {prefix}{}", self.names[i])));
        }
        Ok(())
    }
}

/// Graph handles for every parameter of one [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Handles in parameter order, e.g. variables created by a gradient check.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients in parameter order; parameters the loss does not reach get zeros.
    pub fn collect_grads<T: Scalar>(&self, grads: &Gradients<T>, params: &ParamSet<T>) -> Vec<Tensor<T>> {
        self.vars
            .iter()
            .zip(params.values())
            .map(|(v, p)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect()
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}
