//! Named parameter store.

use std::collections::BTreeMap;
use std::rc::Rc;

use crate::error::{Result, VsrError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Learnable tensors keyed by unique dotted names (`branch1.align.dcn.weight`).
///
/// Iteration order is the lexical name order, which fixes the order of
/// initialization, optimization and serialization.
#[derive(Clone, Debug, Default)]
pub struct ModelWeights<T: Scalar = f32> {
    tensors: BTreeMap<String, Rc<Tensor<T>>>,
}

impl<T: Scalar> PartialEq for ModelWeights<T> {
    fn eq(&self, other: &Self) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((ka, va), (kb, vb))| ka == kb && va == vb)
    }
}

impl<T: Scalar> ModelWeights<T> {
    pub fn new() -> Self {
        ModelWeights {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        tensor.check_finite(&name)?;
        if self.tensors.contains_key(&name) {
            return Err(VsrError::Usage(format!("duplicate parameter name {name}")));
        }
        self.tensors.insert(name, Rc::new(tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name).map(|t| t.as_ref())
    }

    pub(crate) fn get_rc(&self, name: &str) -> Result<Rc<Tensor<T>>> {
        self.tensors
            .get(name)
            .cloned()
            .ok_or_else(|| VsrError::Incompatible(format!("missing parameter {name}")))
    }

    /// Mutable access; clones the tensor if a graph still holds it.
    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name).map(Rc::make_mut)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|k| k.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v.as_ref()))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of learnable scalars.
    pub fn param_count(&self) -> usize {
        self.tensors.values().map(|t| t.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelWeights<U> {
        ModelWeights {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Rc::new(v.cast())))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|t| t.all_finite())
    }
}
