//! Named parameter storage shared by the classifier and the chatbot.

use std::collections::HashMap;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::TensorError;
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::rng::Rng;
use crate::tensor::{Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    /// Id of the `i`-th registered parameter.
    pub fn from_index(i: usize) -> Self {
        ParamId(i)
    }
}

/// Ordered collection of named tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

/// Parameters placed on a tape as gradient-tracking leaves.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps vars created elsewhere, in parameter registration order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound { vars }
    }

    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. Panics on a duplicate name, which is a programming
    /// error in model construction.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(id)
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

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    /// Replaces a tensor by name; the shape must match the existing one.
    pub fn set(&mut self, name: &str, tensor: Tensor) -> Result<(), TensorError> {
        let &i = self
            .index
            .get(name)
            .ok_or_else(|| TensorError::Invalid(format!("unknown parameter {name}")))?;
        if self.tensors[i].shape() != tensor.shape() {
            return Err(TensorError::Shape {
                op: "set_param",
                lhs: self.tensors[i].shape().to_vec(),
                rhs: tensor.shape().to_vec(),
            });
        }
        self.tensors[i] = tensor;
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| tape.leaf(t.clone(), true)).collect(),
        }
    }

    /// Places parameters on the tape as constants, for inference.
    pub fn bind_frozen(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| tape.constant(t.clone())).collect(),
        }
    }

    pub fn new_optimizer(&self, config: AdamConfig) -> AdamState {
        AdamState::new(config, &self.tensors)
    }

    /// Applies one Adam step using the gradients of `bound` parameters.
    pub fn apply(&mut self, bound: &Bound, grads: &Gradients, state: &mut AdamState) -> Result<(), TensorError> {
        let g: Vec<Option<&Tensor>> = bound.vars.iter().map(|&v| grads.get(v)).collect();
        adam_step(&mut self.tensors, &g, state)
    }

    /// Order-sensitive FNV-1a hash of every name and element bit pattern.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for (name, t) in self.iter() {
            eat(name.as_bytes());
            for x in t.data() {
                eat(&x.to_le_bytes());
            }
        }
        h
    }

    /// Rounds every element to the nearest 32-bit float, the precision
    /// checkpoints store.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.tensors {
            for x in t.data_mut() {
                *x = *x as f32 as Float;
            }
        }
    }
}

pub(crate) fn init_normal(rng: &mut Rng, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| (rng.normal() * std) as Float).collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

pub(crate) fn init_uniform(rng: &mut Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_range(-bound, bound) as Float).collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_checks_shape() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros(vec![2, 2]));
        assert!(store.set("w", Tensor::zeros(vec![4])).is_err());
        assert!(store.set("nope", Tensor::zeros(vec![2, 2])).is_err());
        store.set("w", Tensor::full(vec![2, 2], 1.0)).unwrap();
        assert_eq!(store.by_name("w").unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn fingerprint_tracks_values() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros(vec![3]));
        let before = store.fingerprint();
        store.set("w", Tensor::new(vec![3], vec![0.0, 0.0, 1e-12]).unwrap()).unwrap();
        assert_ne!(before, store.fingerprint());
    }
}
