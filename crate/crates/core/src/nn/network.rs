use rand::Rng;

use super::layer::{self, Cache, LayerSpec, Op};
use super::params::{Gradients, InitConfig, Param, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) struct Layer {
    pub name: String,
    pub spec: LayerSpec,
    pub op: Op,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    /// Indices of this layer's parameters in the store.
    pub params: std::ops::Range<usize>,
    cache: Option<Cache>,
}

/// An ordered stack of layers with its parameters and optimizer state.
///
/// Forward passes cache what the backward pass needs; a network is
/// therefore single-writer. [`Network::infer`] is the read-only path.
pub struct Network {
    input_shape: Vec<usize>,
    pub(crate) layers: Vec<Layer>,
    store: ParamStore,
    training: bool,
    input_gradient: bool,
}

impl Network {
    pub fn new(
        input_shape: &[usize],
        specs: &[LayerSpec],
        init: &InitConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Config(format!("invalid network input shape {input_shape:?}")));
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut store = ParamStore::default();
        let mut shape = input_shape.to_vec();
        for (i, spec) in specs.iter().enumerate() {
            let name = format!("{i}_{}", spec.kind());
            let (op, out_shape, pshapes) = layer::resolve(spec, &shape, &name)?;
            let start = store.len();
            for (kind, pshape) in pshapes {
                let value = init.sample(kind, &pshape, rng);
                store.push(Param::new(format!("{name}.{}", kind.label()), kind, value));
            }
            layers.push(Layer {
                name,
                spec: spec.clone(),
                op,
                in_shape: shape,
                out_shape: out_shape.clone(),
                params: start..store.len(),
                cache: None,
            });
            shape = out_shape;
        }
        Ok(Network {
            input_shape: input_shape.to_vec(),
            layers,
            store,
            training: true,
            input_gradient: true,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.layers
            .last()
            .map(|l| l.out_shape.as_slice())
            .unwrap_or(&self.input_shape)
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    /// Per-layer `(name, kind, output shape)`.
    pub fn summary(&self) -> Vec<(String, &'static str, Vec<usize>)> {
        self.layers
            .iter()
            .map(|l| (l.name.clone(), l.spec.kind(), l.out_shape.clone()))
            .collect()
    }

    /// Parameter indices owned by each layer.
    pub fn layer_params(&self) -> Vec<(String, std::ops::Range<usize>)> {
        self.layers.iter().map(|l| (l.name.clone(), l.params.clone())).collect()
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Training mode uses batch statistics in batch-norm layers and updates
    /// their running estimates; evaluation mode uses the running estimates.
    pub fn set_training(&mut self, training: bool) {
        self.training = training;
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    /// Whether `backward` also returns the gradient with respect to the input.
    pub fn set_input_gradient(&mut self, enabled: bool) {
        self.input_gradient = enabled;
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape().len() != self.input_shape.len() + 1 || input.shape()[1..] != self.input_shape[..] {
            let first = self.layers.first().map(|l| l.name.as_str()).unwrap_or("input");
            return Err(Error::Config(format!(
                "{first}: expected input [batch, {:?}], got {:?}",
                self.input_shape,
                input.shape()
            )));
        }
        Ok(())
    }

    /// Forward pass over a batch `[n, input_shape...]`, caching activations.
    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut x = input.clone();
        for layer in &mut self.layers {
            let params: Vec<&Tensor> = layer.params.clone().map(|i| &self.store.get(i).value).collect();
            let (y, cache, stats) = layer::forward(&layer.op, &params, &x, &layer.out_shape, self.training);
            if let (
                Some(stats),
                Op::BatchNorm {
                    running_mean,
                    running_var,
                    ..
                },
            ) = (stats, &mut layer.op)
            {
                let m = layer::BATCHNORM_MOMENTUM;
                for (r, b) in running_mean.iter_mut().zip(&stats.mean) {
                    *r = m * *r + (1.0 - m) * b;
                }
                for (r, b) in running_var.iter_mut().zip(&stats.var) {
                    *r = m * *r + (1.0 - m) * b;
                }
            }
            layer.cache = Some(cache);
            x = y;
        }
        Ok(x)
    }

    /// Read-only evaluation-mode forward pass (no caching, running
    /// batch-norm statistics).
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut x = input.clone();
        for layer in &self.layers {
            let params: Vec<&Tensor> = layer.params.clone().map(|i| &self.store.get(i).value).collect();
            x = layer::forward(&layer.op, &params, &x, &layer.out_shape, false).0;
        }
        Ok(x)
    }

    /// Back-propagate `loss_gradient` (shaped like the last forward output).
    /// Consumes the forward cache.
    pub fn backward(&mut self, loss_gradient: &Tensor) -> Result<Gradients> {
        let mut out_shape = vec![loss_gradient.shape()[0]];
        out_shape.extend_from_slice(self.output_shape());
        if self.layers.iter().any(|l| l.cache.is_none()) {
            return Err(Error::State("backward called before forward".into()));
        }
        if loss_gradient.shape() != out_shape.as_slice() {
            return Err(Error::Config(format!(
                "loss gradient shape {:?} does not match output {:?}",
                loss_gradient.shape(),
                out_shape
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.store.len()];
        let mut dy = loss_gradient.clone();
        let count = self.layers.len();
        for (idx, layer) in self.layers.iter_mut().enumerate().rev() {
            let cache = layer.cache.take().expect("checked above");
            let params: Vec<&Tensor> = layer.params.clone().map(|i| &self.store.get(i).value).collect();
            let need_input = idx > 0 || self.input_gradient;
            let (pgrads, dx) = layer::backward(&layer.op, &params, &cache, &dy, &layer.in_shape, need_input);
            for (slot, g) in layer.params.clone().zip(pgrads) {
                grads[slot] = Some(g);
            }
            match dx {
                Some(dx) => dy = dx,
                None => debug_assert!(idx == 0 && count > 0),
            }
        }
        Ok(Gradients {
            params: grads.into_iter().map(|g| g.expect("every parameter has a gradient")).collect(),
            input: self.input_gradient.then_some(dy),
        })
    }

    /// Copy every parameter value and batch-norm running statistic from
    /// another network with the same topology.
    pub fn copy_weights_from(&mut self, other: &Network) -> Result<()> {
        if self.specs() != other.specs() || self.input_shape != other.input_shape {
            return Err(Error::Config("networks have different topologies".into()));
        }
        for (a, b) in self.store.iter_mut().zip(other.store.iter()) {
            a.value = b.value.clone();
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.op = b.op.clone();
        }
        Ok(())
    }

    /// Batch-norm running statistics, in layer order.
    pub(crate) fn buffers(&self) -> Vec<(usize, &[f64], &[f64])> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| match &l.op {
                Op::BatchNorm {
                    running_mean,
                    running_var,
                    ..
                } => Some((i, running_mean.as_slice(), running_var.as_slice())),
                _ => None,
            })
            .collect()
    }

    pub(crate) fn set_buffers(&mut self, layer: usize, mean: Vec<f64>, var: Vec<f64>) {
        if let Op::BatchNorm {
            running_mean,
            running_var,
            ..
        } = &mut self.layers[layer].op
        {
            *running_mean = mean;
            *running_var = var;
        }
    }
}
