use std::collections::HashMap;

use super::{AutodiffError, Tensor};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Whether L2 weight decay applies (weight matrices only).
    pub decay: bool,
}

/// Named trainable tensors in insertion order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, decay: bool) -> Result<ParamId, AutodiffError> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(AutodiffError::DuplicateParameter(name));
        }
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, value, grad, decay });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Total number of scalar entries across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Replaces a parameter value, keeping its shape.
    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<(), AutodiffError> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(AutodiffError::shape(
                "set_value",
                format!("{}: expected {:?}, got {:?}", p.name, p.value.shape(), value.shape()),
            ));
        }
        p.value = value;
        Ok(())
    }
}

/// Gradients produced by one backward pass.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub(crate) params: Vec<Option<Tensor>>,
    pub(crate) nodes: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a parameter; `None` when the parameter was not on the path to the root.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(id.0).and_then(|g| g.as_ref())
    }

    /// Adjoint of an arbitrary tape node.
    pub fn wrt(&self, var: super::Var) -> Option<&Tensor> {
        self.nodes.get(var.0).and_then(|g| g.as_ref())
    }

    /// Drops the adjoints of intermediate nodes, keeping parameter gradients.
    pub fn discard_nodes(&mut self) {
        self.nodes = Vec::new();
    }

    /// Adds `scale * grad` into every parameter's accumulated gradient.
    pub fn accumulate_into(&self, store: &mut ParamStore, scale: f64) {
        for (slot, p) in self.params.iter().zip(store.params.iter_mut()) {
            if let Some(g) = slot {
                for (acc, v) in p.grad.data_mut().iter_mut().zip(g.data()) {
                    *acc += scale * v;
                }
            }
        }
    }
}
