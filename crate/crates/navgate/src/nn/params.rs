//! Named parameter and gradient containers.
//!
//! Layer order is the insertion order, which keeps serialization and
//! finite-difference sweeps deterministic.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub name: String,
    pub weights: Tensor,
    /// Bias vector; zero-length for layers without one (e.g. graph weights).
    pub bias: Tensor,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    layers: Vec<LayerParams>,
}

impl NetworkParams {
    pub fn new() -> Self {
        NetworkParams { layers: Vec::new() }
    }

    pub fn insert(&mut self, name: &str, weights: Tensor, bias: Tensor) -> Result<()> {
        if self.layers.iter().any(|l| l.name == name) {
            return Err(Error::Config(format!("duplicate layer name `{name}`")));
        }
        self.layers.push(LayerParams {
            name: name.to_string(),
            weights,
            bias,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&LayerParams> {
        self.layers
            .iter()
            .find(|l| l.name == name)
            .ok_or_else(|| Error::Config(format!("missing layer `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut LayerParams> {
        self.layers
            .iter_mut()
            .find(|l| l.name == name)
            .ok_or_else(|| Error::Config(format!("missing layer `{name}`")))
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn scalar_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.bias.is_finite())
    }

    /// Gradient container with the same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Gradients {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    name: l.name.clone(),
                    weights: Tensor::zeros(l.weights.shape().to_vec()),
                    bias: Tensor::zeros(l.bias.shape().to_vec()),
                })
                .collect(),
        }
    }
}

/// Gradients of a scalar loss with respect to every entry of a
/// [`NetworkParams`]; shape-congruent by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    layers: Vec<LayerParams>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Result<&LayerParams> {
        self.layers
            .iter()
            .find(|l| l.name == name)
            .ok_or_else(|| Error::Config(format!("missing gradient layer `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut LayerParams> {
        self.layers
            .iter_mut()
            .find(|l| l.name == name)
            .ok_or_else(|| Error::Config(format!("missing gradient layer `{name}`")))
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn scale(&mut self, c: f64) {
        for layer in &mut self.layers {
            for v in layer.weights.data_mut() {
                *v *= c;
            }
            for v in layer.bias.data_mut() {
                *v *= c;
            }
        }
    }

    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::shape(
                format!("{} gradient layers", self.layers.len()),
                format!("{} gradient layers", other.layers.len()),
            ));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if a.name != b.name {
                return Err(Error::Config(format!(
                    "gradient layer order mismatch: `{}` vs `{}`",
                    a.name, b.name
                )));
            }
            a.weights.add_scaled(&b.weights, 1.0)?;
            a.bias.add_scaled(&b.bias, 1.0)?;
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.data().iter().chain(l.bias.data()))
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// One SGD step: `theta' = theta - lr * g` for every entry.
pub fn sgd_step(params: &mut NetworkParams, grads: &Gradients, learning_rate: f64) -> Result<()> {
    if params.layers.len() != grads.layers.len() {
        return Err(Error::shape(
            format!("{} layers", params.layers.len()),
            format!("{} layers", grads.layers.len()),
        ));
    }
    for (p, g) in params.layers.iter_mut().zip(&grads.layers) {
        if p.name != g.name {
            return Err(Error::Config(format!(
                "parameter/gradient name mismatch: `{}` vs `{}`",
                p.name, g.name
            )));
        }
        p.weights.add_scaled(&g.weights, -learning_rate)?;
        p.bias.add_scaled(&g.bias, -learning_rate)?;
    }
    Ok(())
}

/// Dense layer initialization: weights ~ N(0, 1/in_dim), bias zero.
pub fn init_dense(rng: &mut impl Rng, in_dim: usize, out_dim: usize) -> (Tensor, Tensor) {
    let scale = 1.0 / (in_dim.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let data = (0..in_dim * out_dim)
        .map(|_| normal.sample(rng) * scale)
        .collect();
    (
        Tensor::matrix(out_dim, in_dim, data).expect("sized by construction"),
        Tensor::zeros(vec![out_dim]),
    )
}
