use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use ndarray::ArrayD;

use super::{AutodiffError, Float, Result};

/// Index of a tensor inside a [`Params`] store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// A named trainable tensor.
///
/// `value` is reference counted so a forward graph can borrow it as a leaf
/// without copying; the optimizer takes it back with `Arc::make_mut` once
/// the graph is gone.
#[derive(Debug, Clone)]
pub struct Tensor<T> {
    pub name: String,
    pub value: Arc<ArrayD<T>>,
    pub requires_grad: bool,
    pub grad: Option<ArrayD<T>>,
}

impl<T: Float> Tensor<T> {
    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

static NEXT_STORE: AtomicU64 = AtomicU64::new(1);

fn next_uid() -> u64 {
    NEXT_STORE.fetch_add(1, Ordering::Relaxed)
}

/// Ordered, name-addressable collection of model tensors.
///
/// Every store (including every clone) carries a unique id so gradients
/// recorded against one store are never applied to another.
#[derive(Debug)]
pub struct Params<T> {
    uid: u64,
    tensors: Vec<Tensor<T>>,
    index: BTreeMap<String, ParamId>,
}

impl<T: Clone> Clone for Params<T> {
    fn clone(&self) -> Self {
        Params {
            uid: next_uid(),
            tensors: self.tensors.clone(),
            index: self.index.clone(),
        }
    }
}

impl<T: Float> Default for Params<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Params<T> {
    pub fn new() -> Self {
        Params {
            uid: next_uid(),
            tensors: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub(crate) fn uid(&self) -> u64 {
        self.uid
    }

    /// Registers a trainable tensor. Panics on a duplicate name, which is
    /// always a model-construction bug.
    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<T>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        let id = ParamId(self.tensors.len());
        self.index.insert(name.clone(), id);
        self.tensors.push(Tensor {
            name,
            value: Arc::new(value),
            requires_grad: true,
            grad: None,
        });
        id
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.tensors.iter().enumerate().map(|(i, t)| (ParamId(i), t))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn count(&self) -> usize {
        self.tensors.iter().filter(|t| t.requires_grad).map(|t| t.len()).sum()
    }

    /// Number of scalars in tensors whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.tensors
            .iter()
            .filter(|t| t.requires_grad && t.name.starts_with(prefix))
            .map(|t| t.len())
            .sum()
    }

    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        for t in &mut self.tensors {
            t.requires_grad = requires_grad;
        }
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.grad = None;
        }
    }

    /// Replaces the value of a tensor, keeping its shape contract.
    pub fn set(&mut self, id: ParamId, value: ArrayD<T>) -> Result<()> {
        let t = &mut self.tensors[id.0];
        if t.value.shape() != value.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "set",
                lhs: t.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        t.value = Arc::new(value);
        Ok(())
    }

    /// Copies all values whose names match from `other`.
    pub fn load_from(&mut self, other: &[(String, ArrayD<T>)]) -> Result<()> {
        for (name, value) in other {
            let id = self.id(name).ok_or_else(|| AutodiffError::InvalidArgument {
                op: "load",
                msg: format!("unknown tensor {name}"),
            })?;
            self.set(id, value.clone())?;
        }
        for t in &self.tensors {
            if !other.iter().any(|(n, _)| *n == t.name) {
                return Err(AutodiffError::InvalidArgument {
                    op: "load",
                    msg: format!("checkpoint is missing tensor {}", t.name),
                });
            }
        }
        Ok(())
    }

    pub fn named_values(&self) -> Vec<(String, ArrayD<T>)> {
        self.tensors
            .iter()
            .map(|t| (t.name.clone(), (*t.value).clone()))
            .collect()
    }

    /// Converts every tensor to another precision.
    pub fn cast<U: Float>(&self) -> Params<U> {
        let mut out = Params::new();
        for t in &self.tensors {
            out.add(
                t.name.clone(),
                t.value.mapv(|v| U::from_f64_lossy(v.to_f64().unwrap_or(f64::NAN))),
            );
        }
        out
    }
}
