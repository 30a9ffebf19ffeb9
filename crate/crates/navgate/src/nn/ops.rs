//! Forward operations: dense layers, activations, softmax, losses, graph
//! convolution and the recurrent cell.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Linear,
    LeakyRelu(f64),
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::LeakyRelu(alpha) => leaky_relu(x, alpha),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative with respect to the pre-activation value.
    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::LeakyRelu(alpha) => {
                if pre >= 0.0 {
                    1.0
                } else {
                    alpha
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }
}

/// `y = W x + b`.
pub fn dense_forward(weights: &Tensor, bias: &Tensor, x: &[f64]) -> Result<Vec<f64>> {
    let mut y = weights.matvec(x)?;
    if bias.len() != y.len() {
        return Err(Error::shape(
            format!("bias of length {}", y.len()),
            format!("bias of length {}", bias.len()),
        ));
    }
    for (yi, bi) in y.iter_mut().zip(bias.data()) {
        *yi += bi;
    }
    Ok(y)
}

/// `y = x` for `x >= 0`, else `alpha * x`.
pub fn leaky_relu(x: f64, alpha: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        alpha * x
    }
}

/// Numerically stable softmax; entries in (0, 1), summing to 1.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Shannon entropy of a distribution, in nats.
pub fn entropy(probs: &[f64]) -> f64 {
    probs
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| -p * p.ln())
        .sum()
}

/// Focal loss `-(1 - p)^gamma * ln(p)` of the probability assigned to the
/// ground-truth class. Zero iff the prediction is perfect.
pub fn focal_loss(p_true: f64, gamma: f64) -> Result<f64> {
    if !(p_true > 0.0 && p_true <= 1.0) {
        return Err(Error::Domain(format!(
            "focal loss requires p_true in (0, 1], got {p_true}"
        )));
    }
    if !(gamma >= 0.0) {
        return Err(Error::Domain(format!(
            "focal loss requires gamma >= 0, got {gamma}"
        )));
    }
    Ok(-(1.0 - p_true).powf(gamma) * p_true.ln())
}

/// d(focal)/d(logit_k) = coef * (delta_k - p_k) with this coefficient, where
/// p is the probability of the true class. Tends to 0 as p -> 1, which the
/// naive expression does not do in floating point, hence the guard.
pub fn focal_loss_logit_coefficient(p_true: f64, gamma: f64) -> f64 {
    let one_minus = 1.0 - p_true;
    if one_minus <= 1e-14 {
        return 0.0;
    }
    gamma * p_true * one_minus.powf(gamma - 1.0) * p_true.ln() - one_minus.powf(gamma)
}

/// One graph-convolution layer: `H' = act(A_hat * H * W)`.
pub fn gcn_layer(
    node_features: &Tensor,
    normalized_adjacency: &Tensor,
    weights: &Tensor,
    activation: Activation,
) -> Result<Tensor> {
    if normalized_adjacency.shape().len() != 2
        || normalized_adjacency.rows() != normalized_adjacency.cols()
    {
        return Err(Error::shape(
            "square adjacency".to_string(),
            format!("{:?}", normalized_adjacency.shape()),
        ));
    }
    let mixed = normalized_adjacency.matmul(node_features)?;
    let mut out = mixed.matmul(weights)?;
    for v in out.data_mut() {
        *v = activation.apply(*v);
    }
    Ok(out)
}

/// Row-normalized adjacency with self-loops: `D^-1 (A + I)`.
pub fn normalize_adjacency(adjacency: &Tensor) -> Result<Tensor> {
    if adjacency.shape().len() != 2 || adjacency.rows() != adjacency.cols() {
        return Err(Error::shape(
            "square adjacency".to_string(),
            format!("{:?}", adjacency.shape()),
        ));
    }
    let n = adjacency.rows();
    let mut out = Tensor::zeros(vec![n, n]);
    for i in 0..n {
        let mut degree = 0.0;
        for j in 0..n {
            let a = if i == j {
                1.0
            } else {
                adjacency.get2(i, j).max(0.0)
            };
            out.set2(i, j, a);
            degree += a;
        }
        for j in 0..n {
            out.set2(i, j, out.get2(i, j) / degree);
        }
    }
    Ok(out)
}

/// Elman recurrent cell: `h = tanh(W_x x + W_h h_prev + b)`.
pub fn recurrent_step(
    w_x: &Tensor,
    w_h: &Tensor,
    bias: &Tensor,
    x: &[f64],
    h_prev: &[f64],
) -> Result<Vec<f64>> {
    let mut pre = dense_forward(w_x, bias, x)?;
    let rec = w_h.matvec(h_prev)?;
    if rec.len() != pre.len() {
        return Err(Error::shape(
            format!("recurrent output of length {}", pre.len()),
            format!("length {}", rec.len()),
        ));
    }
    for (p, r) in pre.iter_mut().zip(&rec) {
        *p = (*p + r).tanh();
    }
    Ok(pre)
}
