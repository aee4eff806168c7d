//! Named parameter storage and the small layers built on it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Activation, Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named parameter tensors. Order is insertion order and fixes the
/// checkpoint layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::config(format!("duplicate parameter `{name}`")));
        }
        self.names.push(name);
        self.tensors.push(value);
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.id(name).map(|id| self.get_mut(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Records every parameter as a leaf. Frozen bindings receive no gradients.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        Bound(
            self.tensors
                .iter()
                .map(|t| g.leaf(t.clone(), trainable))
                .collect(),
        )
    }

    /// Gradients of every parameter after a backward pass; unused ones are zero.
    pub fn collect_grads(&self, g: &mut Graph<T>, bound: &Bound) -> Vec<Tensor<T>> {
        bound
            .0
            .iter()
            .zip(&self.tensors)
            .map(|(&v, t)| g.take_grad(v).unwrap_or_else(|| t.zeros_like()))
            .collect()
    }

    /// Replaces values from another store with the same names and shapes.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        for (name, value) in other.iter() {
            let slot = self
                .by_name_mut(name)
                .ok_or_else(|| Error::Format(format!("unexpected parameter `{name}`")))?;
            if slot.shape() != value.shape() {
                return Err(Error::shape(format!(
                    "parameter `{name}`: expected {:?}, found {:?}",
                    slot.shape(),
                    value.shape()
                )));
            }
            *slot = value.clone();
        }
        if other.len() != self.len() {
            return Err(Error::Format(format!(
                "expected {} parameters, found {}",
                self.len(),
                other.len()
            )));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Graph handles for the parameters of one store, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    /// Handles in store order, for graphs whose leaves were created elsewhere.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound(vars)
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }
}

/// Seeded parameter initialisation. Values are drawn in `f64` so a model
/// built at either precision starts from the same point.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn linear<T: Scalar>(&mut self, fan_in: usize, shape: &[usize]) -> Result<Tensor<T>> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| T::of(self.rng.random_range(-bound..=bound)))
            .collect();
        Tensor::new(shape, data)
    }

    /// `normal(0, 0.02)`.
    pub fn embedding<T: Scalar>(&mut self, shape: &[usize]) -> Result<Tensor<T>> {
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::of(normal.sample(&mut self.rng))).collect();
        Tensor::new(shape, data)
    }
}

/// Dropout source: inactive at evaluation time or when the rate is zero.
pub struct Dropout {
    rate: f64,
    rng: Option<ChaCha8Rng>,
}

impl Dropout {
    pub fn disabled() -> Self {
        Dropout { rate: 0.0, rng: None }
    }

    pub fn training(rate: f64, seed: u64) -> Self {
        Dropout {
            rate,
            rng: (rate > 0.0).then(|| ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn apply<T: Scalar>(&mut self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let Some(rng) = self.rng.as_mut() else {
            return Ok(x);
        };
        let keep: Vec<bool> = (0..g.value(x).numel())
            .map(|_| rng.random::<f64>() >= self.rate)
            .collect();
        g.dropout(x, &keep, T::of(self.rate))
    }
}

/// Affine map `x·W + b` with `W: in×out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        name: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), init.linear(fan_in, &[fan_in, fan_out])?)?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out])?)?;
        Ok(Linear {
            weight,
            bias,
            fan_in,
            fan_out,
        })
    }

    /// Applies the map to an `m×in` matrix, or to a length-`in` vector
    /// (returning a `1×out` row).
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let x = if g.value(x).rank() == 1 {
            let n = g.value(x).numel();
            g.reshape(x, &[1, n])?
        } else {
            x
        };
        let y = g.matmul(x, p.var(self.weight))?;
        g.add_row(y, p.var(self.bias))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        let gain = store.add(format!("{name}.gain"), Tensor::full(&[dim], T::one())?)?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[dim])?)?;
        Ok(LayerNorm { gain, bias })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        g.layer_norm(x, p.var(self.gain), p.var(self.bias), T::of(LAYER_NORM_EPS))
    }
}

/// Two linear layers with an activation between them.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub first: Linear,
    pub second: Linear,
    pub activation: Activation,
}

impl Mlp {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        name: &str,
        dims: (usize, usize, usize),
        activation: Activation,
    ) -> Result<Self> {
        Ok(Mlp {
            first: Linear::new(store, init, &format!("{name}.0"), dims.0, dims.1)?,
            second: Linear::new(store, init, &format!("{name}.1"), dims.1, dims.2)?,
            activation,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let h = self.first.forward(g, p, x)?;
        let h = g.activation(h, self.activation)?;
        self.second.forward(g, p, h)
    }
}
