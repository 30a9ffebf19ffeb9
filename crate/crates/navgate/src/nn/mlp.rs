//! Sequential dense stacks with cached forward passes and exact manual
//! backpropagation.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::ops::{dense_forward, Activation};
use crate::nn::params::{init_dense, Gradients, NetworkParams};

#[derive(Debug, Clone)]
pub struct LayerSpec {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        LayerSpec {
            name: name.to_string(),
            in_dim,
            out_dim,
            activation,
        }
    }
}

/// A stack of dense layers applied in order. Parameters live in a separate
/// [`NetworkParams`] so snapshots and optimizer steps stay value-like.
#[derive(Debug, Clone)]
pub struct Mlp {
    specs: Vec<LayerSpec>,
}

/// Per-layer inputs and pre-activations from one forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Vec<f64>>,
    pres: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn new(specs: Vec<LayerSpec>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Empty("layer stack".to_string()));
        }
        for pair in specs.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::shape(
                    format!("layer `{}` input of {}", pair[1].name, pair[0].out_dim),
                    format!("{}", pair[1].in_dim),
                ));
            }
        }
        Ok(Mlp { specs })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn in_dim(&self) -> usize {
        self.specs[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.specs[self.specs.len() - 1].out_dim
    }

    /// Insert freshly initialized parameters for every layer of this stack.
    pub fn init_params(&self, params: &mut NetworkParams, rng: &mut impl Rng) -> Result<()> {
        for spec in &self.specs {
            let (w, b) = init_dense(rng, spec.in_dim, spec.out_dim);
            params.insert(&spec.name, w, b)?;
        }
        Ok(())
    }

    pub fn forward(&self, params: &NetworkParams, x: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        if x.len() != self.in_dim() {
            return Err(Error::shape(
                format!("input of length {}", self.in_dim()),
                format!("length {}", x.len()),
            ));
        }
        let mut inputs = Vec::with_capacity(self.specs.len());
        let mut pres = Vec::with_capacity(self.specs.len());
        let mut current = x.to_vec();
        for spec in &self.specs {
            let layer = params.get(&spec.name)?;
            let pre = dense_forward(&layer.weights, &layer.bias, &current)?;
            let post: Vec<f64> = pre.iter().map(|v| spec.activation.apply(*v)).collect();
            inputs.push(std::mem::replace(&mut current, post));
            pres.push(pre);
        }
        Ok((current, MlpCache { inputs, pres }))
    }

    /// Backpropagate `d_out` (dL/d output) through the stack, accumulating
    /// parameter gradients into `grads`; returns dL/d input.
    pub fn backward_into(
        &self,
        params: &NetworkParams,
        cache: &MlpCache,
        d_out: &[f64],
        grads: &mut Gradients,
    ) -> Result<Vec<f64>> {
        if cache.inputs.len() != self.specs.len() {
            return Err(Error::Contract(
                "forward cache does not match the layer stack".to_string(),
            ));
        }
        let mut upstream = d_out.to_vec();
        for (idx, spec) in self.specs.iter().enumerate().rev() {
            let layer = params.get(&spec.name)?;
            let pre = &cache.pres[idx];
            if upstream.len() != pre.len() {
                return Err(Error::shape(
                    format!("gradient of length {}", pre.len()),
                    format!("length {}", upstream.len()),
                ));
            }
            let d_pre: Vec<f64> = upstream
                .iter()
                .zip(pre)
                .map(|(u, p)| u * spec.activation.derivative(*p))
                .collect();
            let g = grads.get_mut(&spec.name)?;
            g.weights.add_outer(&d_pre, &cache.inputs[idx]);
            for (gb, dp) in g.bias.data_mut().iter_mut().zip(&d_pre) {
                *gb += dp;
            }
            upstream = layer.weights.tmatvec(&d_pre)?;
        }
        Ok(upstream)
    }

    /// Convenience wrapper returning a fresh gradient container. The
    /// container covers every layer of `params`, not only this stack's.
    pub fn backward(
        &self,
        params: &NetworkParams,
        cache: &MlpCache,
        d_out: &[f64],
    ) -> Result<(Gradients, Vec<f64>)> {
        let mut grads = params.zeros_like();
        let d_in = self.backward_into(params, cache, d_out, &mut grads)?;
        Ok((grads, d_in))
    }
}
