//! Named parameter storage and gradient buffers.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
}

/// All learnable tensors of a model, addressed by unique hierarchical names
/// (`enc.block.0.attn.q.weight`). Insertion order is stable and defines the
/// serialization order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::validation(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, value });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Replace values from another store with identical names and shapes.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        for p in &mut self.params {
            let id = other
                .id(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{}`", p.name)))?;
            let src = other.value(id);
            if src.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    p.name,
                    src.shape(),
                    p.value.shape()
                )));
            }
            p.value = src.clone();
        }
        Ok(())
    }
}

/// Gradient buffers aligned with a [`ParamStore`]; untouched parameters hold
/// `None` until [`Grads::densify`] fills them with zeros.
#[derive(Clone, Debug)]
pub struct Grads {
    slots: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn new(num_params: usize) -> Self {
        Self {
            slots: vec![None; num_params],
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.slots.get(id.0).and_then(Option::as_ref)
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Tensor) {
        match &mut self.slots[id.0] {
            Some(acc) => acc.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }

    pub(crate) fn accumulate_owned(&mut self, id: ParamId, g: Tensor) {
        match &mut self.slots[id.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Adds `other` in slot order.
    pub fn merge(&mut self, other: Grads) {
        for (i, g) in other.slots.into_iter().enumerate() {
            if let Some(g) = g {
                self.accumulate_owned(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.slots.iter_mut().flatten() {
            g.scale_assign(s);
        }
    }

    /// Zero-fill every parameter that received no gradient.
    pub fn densify(&mut self, store: &ParamStore) {
        for (i, slot) in self.slots.iter_mut().enumerate() {
            if slot.is_none() {
                let v = &store.params[i].value;
                *slot = Some(Tensor::zeros(v.rows(), v.cols()));
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slots.iter().flatten().all(Tensor::is_finite)
    }
}

/// I.i.d. normal initialization.
pub fn normal_init<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Tensor {
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(rows, cols, |_, _| dist.sample(rng))
}

/// LeCun normal: std = 1/sqrt(fan_in), the initialization SELU networks assume.
pub fn lecun_init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    normal_init(fan_in, fan_out, 1.0 / (fan_in as f64).sqrt(), rng)
}
