//! Named parameter tensors, their per-graph bindings, and gradient buffers.

use indexmap::IndexMap;
use rand::Rng;
use thiserror::Error;

use crate::tensor::{Gradients, Graph, Scalar, Tensor, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("unknown parameter {0}")]
    Unknown(String),
    #[error("parameter {name}: expected shape {expected:?}, found {found:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

/// Ordered collection of named parameters. Order is insertion order and is
/// the order used by checkpoints and optimizers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.params.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>, ParamError> {
        self.params
            .get(name)
            .ok_or_else(|| ParamError::Unknown(name.to_owned()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>, ParamError> {
        self.params
            .get_mut(name)
            .ok_or_else(|| ParamError::Unknown(name.to_owned()))
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.get_index_of(name)
    }

    pub fn by_index(&self, i: usize) -> (&str, &Tensor<T>) {
        let (k, v) = self.params.get_index(i).expect("index in range");
        (k, v)
    }

    pub fn by_index_mut(&mut self, i: usize) -> &mut Tensor<T> {
        self.params.get_index_mut(i).expect("index in range").1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn element_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Checks that `name` exists with the given shape.
    pub fn expect_shape(&self, name: &str, shape: &[usize]) -> Result<(), ParamError> {
        let t = self.get(name)?;
        if t.shape() != shape {
            return Err(ParamError::Shape {
                name: name.to_owned(),
                expected: shape.to_vec(),
                found: t.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn set_all(&mut self, value: T) {
        for t in self.params.values_mut() {
            t.data_mut().fill(value);
        }
    }
}

/// Glorot-uniform initialization for a `[fan_in, fan_out]` matrix.
pub fn xavier<T: Scalar, R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| T::lit(rng.random_range(-bound..bound)))
        .collect();
    Tensor::new(&[fan_in, fan_out], data).expect("matrix shape")
}

/// Binds parameters into a graph on first use, once per graph.
pub struct Binder<'a, T: Scalar> {
    store: &'a ParamStore<T>,
    bound: Vec<Option<Var>>,
}

impl<'a, T: Scalar> Binder<'a, T> {
    pub fn new(store: &'a ParamStore<T>) -> Self {
        Self {
            store,
            bound: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'a ParamStore<T> {
        self.store
    }

    pub fn bind(&mut self, g: &mut Graph<'a, T>, name: &str) -> Result<Var, ParamError> {
        let i = self
            .store
            .index_of(name)
            .ok_or_else(|| ParamError::Unknown(name.to_owned()))?;
        Ok(*self.bound[i].get_or_insert_with(|| g.param(self.store.by_index(i).1)))
    }

    /// Uses `var` for `name` instead of binding the stored tensor, so a
    /// caller can supply its own leaf (e.g. a gradient-check input).
    pub fn preset(&mut self, name: &str, var: Var) -> Result<(), ParamError> {
        let i = self
            .store
            .index_of(name)
            .ok_or_else(|| ParamError::Unknown(name.to_owned()))?;
        self.bound[i] = Some(var);
        Ok(())
    }

    /// Variables bound so far, by parameter index.
    pub fn bound(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (i, v)))
    }

    /// Collects the gradients of every bound parameter.
    pub fn collect(&self, grads: &mut Gradients<T>) -> GradStore<T> {
        let mut out = GradStore::zeros_like(self.store);
        for (i, v) in self.bound() {
            if let Some(g) = grads.take(v) {
                out.grads[i] = g;
            }
        }
        out
    }
}

/// Dense gradient buffer aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradStore<T> {
    grads: Vec<Tensor<T>>,
}

impl<T: Scalar> GradStore<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Self {
            grads: store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect(),
        }
    }

    /// Uses the tensors of `store` as gradients, in store order.
    pub fn from_store(store: ParamStore<T>) -> Self {
        Self {
            grads: store.iter().map(|(_, t)| t.clone()).collect(),
        }
    }

    pub fn get(&self, i: usize) -> &Tensor<T> {
        &self.grads[i]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn accumulate(&mut self, other: &GradStore<T>) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, c: T) {
        for g in &mut self.grads {
            for v in g.data_mut() {
                *v = *v * c;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.data())
            .map(|v| {
                let x = v.as_f64();
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(T::lit(max_norm / norm));
        }
        norm
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().all(Tensor::all_finite)
    }
}
