//! Named parameter storage and binding onto a tape.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Ordered collection of named parameter tensors and their gradients.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Scalar> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    grads: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

/// Tape variables for every parameter of a store, in store order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps existing tape variables, in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidConfig {
                field: "params",
                reason: format!("duplicate parameter name {name}"),
            });
        }
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.grads.push(Tensor::zeros(value.shape().to_vec()));
        self.values.push(value);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.grads[id.0]
    }

    pub fn grads(&self) -> &[Tensor<T>] {
        &self.grads
    }

    /// Values and gradients side by side, for optimizers.
    pub fn values_and_grads_mut(&mut self) -> impl Iterator<Item = (&mut Tensor<T>, &Tensor<T>)> {
        self.values.iter_mut().zip(self.grads.iter())
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Records every parameter as a tape leaf.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> Bound {
        Bound {
            vars: self.values.iter().map(|v| tape.leaf(v.clone(), requires_grad)).collect(),
        }
    }

    /// Adds the tape's leaf gradients into the stored gradients.
    pub fn accumulate_grads(&mut self, tape: &Tape<T>, bound: &Bound) {
        for (g, &v) in self.grads.iter_mut().zip(&bound.vars) {
            if let Some(tg) = tape.grad(v) {
                g.data_mut().iter_mut().zip(tg.data()).for_each(|(a, &b)| *a += b);
            }
        }
    }

    /// Converts every value to another element type (gradients reset).
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            grads: self.grads.iter().map(|g| Tensor::zeros(g.shape().to_vec())).collect(),
            index: self.index.clone(),
        }
    }

    /// Replaces every value with `N(0, std²)` draws; used to leave the
    /// zero-initialised identity point before gradient checks.
    pub fn randomize<R: Rng>(&mut self, rng: &mut R, std: f64) {
        let normal = Normal::new(0.0, std).expect("finite std");
        for v in &mut self.values {
            v.data_mut().iter_mut().for_each(|x| *x = T::from_f64(normal.sample(rng)));
        }
    }
}

/// Weight initialisation scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `N(0, 2 / fan_in)`.
    He,
    Zeros,
}

pub(crate) fn init_tensor<T: Scalar, R: Rng>(shape: Vec<usize>, init: Init, fan_in: usize, rng: &mut R) -> Tensor<T> {
    match init {
        Init::Zeros => Tensor::zeros(shape),
        Init::He => {
            let normal = Normal::new(0.0, (2.0 / fan_in.max(1) as f64).sqrt()).expect("finite std");
            Tensor::from_fn(shape, |_| T::from_f64(normal.sample(rng)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.add("a", Tensor::zeros(vec![2])).unwrap();
        assert!(s.add("a", Tensor::zeros(vec![2])).is_err());
        assert_eq!(s.count(), 2);
    }

    #[test]
    fn grads_flow_back_into_store() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add("w", Tensor::from_f64(vec![2], &[1.0, 2.0]).unwrap()).unwrap();
        let mut tape = Tape::new();
        let b = s.bind(&mut tape, true);
        let sq = tape.mul(b.get(id), b.get(id)).unwrap();
        let l = tape.sum(sq);
        tape.backward(l).unwrap();
        s.accumulate_grads(&tape, &b);
        assert_eq!(s.grad(id).data(), &[2.0, 4.0]);
        s.zero_grads();
        assert_eq!(s.grad(id).data(), &[0.0, 0.0]);
    }
}
