use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::tensor::{Gradients, Tape, Tensor, Var};

/// Ordered, named collection of learnable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor and returns its index.
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor.with_grad());
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn entry(&self, i: usize) -> (&str, &Tensor) {
        (&self.names[i], &self.tensors[i])
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.tensors.iter().map(|t| tape.param(t)).collect()
    }

    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.tensors.iter().map(|t| tape.constant(t.clone())).collect()
    }

    /// Adds the gradients of `bound` (from [`bind`](Self::bind)) into each
    /// tensor's gradient buffer.
    pub fn accumulate(&mut self, bound: &[Var<'_>], grads: &Gradients) -> Result<()> {
        for (t, v) in self.tensors.iter_mut().zip(bound) {
            grads.accumulate_into(*v, t)?;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }
}

/// Allocates named parameters with a seeded initialiser.
pub(crate) struct Builder {
    store: ParamStore,
    rng: ChaCha8Rng,
    std: f64,
}

impl Builder {
    pub(crate) fn new(rng: ChaCha8Rng, std: f64) -> Self {
        Builder {
            store: ParamStore::new(),
            rng,
            std,
        }
    }

    /// Normal(0, std²) truncated at two standard deviations.
    pub(crate) fn weight(&mut self, name: String, shape: &[usize]) -> usize {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| loop {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                if z.abs() <= 2.0 {
                    break z * self.std;
                }
            })
            .collect();
        self.store
            .push(name, Tensor::new(shape, data).expect("finite init"))
    }

    pub(crate) fn zeros(&mut self, name: String, shape: &[usize]) -> usize {
        self.store.push(name, Tensor::zeros(shape))
    }

    pub(crate) fn ones(&mut self, name: String, shape: &[usize]) -> usize {
        self.store.push(name, Tensor::full(shape, 1.0))
    }

    pub(crate) fn finish(self) -> ParamStore {
        self.store
    }
}
