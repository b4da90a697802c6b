use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::layer::ParamKind;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One learnable tensor with its two optimizer moment slots.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
    /// First-moment estimate (Adam only).
    pub s: Tensor,
    /// Second-moment estimate.
    pub r: Tensor,
}

impl Param {
    pub fn new(name: String, kind: ParamKind, value: Tensor) -> Self {
        let s = Tensor::zeros(value.shape());
        let r = Tensor::zeros(value.shape());
        Param {
            name,
            kind,
            value,
            s,
            r,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new(params: Vec<Param>) -> Self {
        ParamStore { params }
    }

    pub fn push(&mut self, p: Param) {
        self.params.push(p);
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, Param> {
        self.params.iter_mut()
    }

    pub fn get(&self, i: usize) -> &Param {
        &self.params[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Param {
        &mut self.params[i]
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Clamp every parameter into `[-bound, bound]`.
    pub fn clip(&mut self, bound: f64) {
        for p in &mut self.params {
            for v in p.value.data_mut() {
                *v = v.clamp(-bound, bound);
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.value.max_abs()))
    }
}

/// Gradients aligned with a [`ParamStore`], plus the input gradient when it
/// was requested.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub params: Vec<Tensor>,
    pub input: Option<Tensor>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients {
            params: store.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            input: None,
        }
    }

    /// Sum parameter gradients (input gradients are dropped).
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            a.add_assign(b);
        }
        self.input = None;
    }

    pub fn scale(&mut self, k: f64) {
        for g in &mut self.params {
            g.scale(k);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(Tensor::is_finite)
    }

    pub(crate) fn check_aligned(&self, store: &ParamStore) -> Result<()> {
        if self.params.len() != store.len()
            || self
                .params
                .iter()
                .zip(store.iter())
                .any(|(g, p)| g.shape() != p.value.shape())
        {
            return Err(Error::Config("gradient set does not match the parameter store".into()));
        }
        Ok(())
    }
}

/// Parameter initialization: truncated zero-mean Gaussian weights and
/// constant biases.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitConfig {
    pub weight_std: f64,
    /// Samples beyond `truncation * weight_std` are redrawn.
    pub truncation: f64,
    pub bias: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            weight_std: 0.1,
            truncation: 2.0,
            bias: 0.1,
        }
    }
}

impl InitConfig {
    pub(crate) fn sample(&self, kind: ParamKind, shape: &[usize], rng: &mut impl Rng) -> Tensor {
        match kind {
            ParamKind::Weight => Tensor::from_fn(shape, |_| loop {
                let z: f64 = StandardNormal.sample(rng);
                if z.abs() <= self.truncation {
                    break z * self.weight_std;
                }
            }),
            ParamKind::Bias => Tensor::full(shape, self.bias),
            ParamKind::Scale => Tensor::full(shape, 1.0),
            ParamKind::Shift => Tensor::zeros(shape),
        }
    }
}
