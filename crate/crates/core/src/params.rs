//! Named parameter storage and initialization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Ordered, uniquely named trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<F: Real = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
}

impl<F: Real> Default for ParamStore<F> {
    fn default() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter `{name}`");
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<F>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor<F>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.tensors
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Record every parameter on `graph` as a trainable leaf, in store order.
    pub fn bind<'g>(&self, graph: &'g Graph<F>) -> Vec<Var<'g, F>> {
        self.tensors.iter().map(|t| graph.param(t.clone())).collect()
    }

    /// Record every parameter as a constant (inference).
    pub fn bind_frozen<'g>(&self, graph: &'g Graph<F>) -> Vec<Var<'g, F>> {
        self.tensors.iter().map(|t| graph.constant(t.clone())).collect()
    }

    /// Replace values by name; every stored name must be present with the same shape.
    pub fn load_named<'a>(&mut self, source: impl IntoIterator<Item = (&'a str, &'a Tensor<F>)>) -> Result<()> {
        let source: Vec<_> = source.into_iter().collect();
        for (name, slot) in self.names.iter().zip(self.tensors.iter_mut()) {
            let (_, t) = source
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if t.shape() != slot.shape() {
                return Err(Error::shape("load parameter", slot.shape(), t.shape()));
            }
            *slot = (*t).clone();
        }
        Ok(())
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Weights uniform in `±1/√fan_in`.
pub fn uniform_fan_in<F: Real>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<F> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| F::lit(rng.gen_range(-bound..bound))).collect();
    Tensor::new(shape, data).expect("shape product matches")
}

/// A dense layer's weight (`in×out`) and bias (`out`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        rng: &mut ChaCha8Rng,
        name: &str,
        inputs: usize,
        outputs: usize,
    ) -> Self {
        Dense {
            w: store.add(
                format!("{name}.weight"),
                uniform_fan_in(rng, &[inputs, outputs], inputs),
            ),
            b: store.add(format!("{name}.bias"), Tensor::zeros(&[outputs])),
        }
    }

    pub fn forward<'g, F: Real>(&self, vars: &[Var<'g, F>], x: Var<'g, F>) -> Result<Var<'g, F>> {
        x.linear(vars[self.w.0], Some(vars[self.b.0]))
    }
}

/// Dense layers with ReLU between them (none after the last).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn new<F: Real>(store: &mut ParamStore<F>, rng: &mut ChaCha8Rng, name: &str, widths: &[usize]) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::new(store, rng, &format!("{name}.{i}"), w[0], w[1]))
            .collect();
        Mlp { layers }
    }

    pub fn forward<'g, F: Real>(&self, vars: &[Var<'g, F>], mut x: Var<'g, F>) -> Result<Var<'g, F>> {
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(vars, x)?;
            if i + 1 < self.layers.len() {
                x = x.relu();
            }
        }
        Ok(x)
    }
}
