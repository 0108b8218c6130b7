//! Dense numeric kernel: matrices, affine layers and MLPs with manual
//! backprop, softmax/cross-entropy, and first-order optimizers.

mod layer;
mod matrix;
mod ops;
mod optim;

pub use layer::{affine_forward, relu_in_place, AffineLayer, Mlp, MlpTrace};
pub use matrix::{axpy, dot, DenseMatrix};
pub use ops::{cross_entropy_grad, log_softmax, log_sum_exp, softmax, PROB_FLOOR};
pub(crate) use ops::{log_softmax_unchecked, softmax_unchecked};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
