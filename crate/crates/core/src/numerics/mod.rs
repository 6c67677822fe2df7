//! Minimal dense-tensor engine: MLPs with manual backward passes, stable
//! reductions, optimizers and a central-difference gradient oracle.

mod gradcheck;
mod mlp;
mod optim;
mod reduce;
mod tensor;

pub use gradcheck::finite_difference_check;
pub use mlp::{Activation, Dense, ForwardCache, LayerGradient, MlpGradients, MlpNetwork};
pub use optim::{OptimizerKind, OptimizerState};
pub use reduce::{log_sigmoid, logsumexp, lse, sigmoid, softmax, softmax_into, softmax_vec, softplus};
pub use tensor::Tensor;
