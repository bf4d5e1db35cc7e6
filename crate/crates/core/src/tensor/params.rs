use std::collections::BTreeMap;

use super::{numel, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

/// A named trainable tensor with its gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
    /// Row held at zero (the padding embedding).
    pub frozen_row: Option<usize>,
}

impl Param {
    pub fn zero_frozen_row(&mut self) {
        if let Some(row) = self.frozen_row {
            let cols = self.shape.get(1).copied().unwrap_or(1);
            self.values[row * cols..(row + 1) * cols]
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
    }
}

/// Owns every trainable tensor of a model, in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], values: Vec<f64>) -> Result<ParamId> {
        let name = name.into();
        if numel(shape) != values.len() || shape.len() > 2 {
            return Err(Error::shape(
                "param",
                format!("{}: shape {:?} with {} values", name, shape, values.len()),
            ));
        }
        if self.by_name.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter {}", name)));
        }
        let id = ParamId(self.params.len());
        self.params.push(Param {
            grad: vec![0.0; values.len()],
            name: name.clone(),
            shape: shape.to_vec(),
            values,
            frozen_row: None,
        });
        self.by_name.insert(name, id);
        Ok(id)
    }

    pub fn freeze_row(&mut self, id: ParamId, row: usize) {
        let p = &mut self.params[id.0];
        p.frozen_row = Some(row);
        p.zero_frozen_row();
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Records the current values of `id` on `tape` as a gradient-carrying leaf.
    pub fn bind(&self, tape: &mut Tape, id: ParamId) -> Var {
        let p = &self.params[id.0];
        tape.param_leaf(id, &p.shape, p.values.clone())
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds the gradients that `tape` holds for bound parameters.
    pub fn accumulate_grads(&mut self, tape: &Tape) {
        for (id, g) in tape.param_grads() {
            for (dst, src) in self.params[id.0].grad.iter_mut().zip(g) {
                *dst += src;
            }
        }
    }

    pub fn first_non_finite_grad(&self) -> Option<&str> {
        self.params
            .iter()
            .find(|p| p.grad.iter().any(|g| !g.is_finite()))
            .map(|p| p.name.as_str())
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    /// Copies values from `other` for every parameter name they share.
    pub fn copy_values_from(&mut self, other: &ParamStore) {
        for p in &mut self.params {
            if let Some(id) = other.id(&p.name) {
                let src = other.get(id);
                if src.shape == p.shape {
                    p.values.copy_from_slice(&src.values);
                }
            }
        }
    }
}
