//! Minimal dense/recurrent/graph network kernel with manual gradients.
//!
//! Everything is `f64` and single-threaded; networks here have a few
//! thousand parameters, so clarity and exactness win over vectorization.
//! Gradient code is verified against central finite differences
//! ([`gradcheck::finite_diff_check`]) throughout the test suite.

pub mod gradcheck;
pub mod mlp;
pub mod ops;
pub mod params;
pub mod tensor;

pub use gradcheck::finite_diff_check;
pub use mlp::{LayerSpec, Mlp, MlpCache};
pub use ops::{
    dense_forward, entropy, focal_loss, focal_loss_logit_coefficient, gcn_layer, leaky_relu,
    normalize_adjacency, recurrent_step, softmax, Activation,
};
pub use params::{init_dense, sgd_step, Gradients, LayerParams, NetworkParams};
pub use tensor::Tensor;
