//! Dense tensors, reverse-mode differentiation and Adam.

mod adam;
mod gradcheck;
mod graph;
mod tensor;

pub use adam::{adam_step, Adam, AdamState, BETA1, BETA2, EPSILON};
pub use gradcheck::{grad_check, grad_check_many};
pub use graph::{sigmoid, softplus, Gradients, Graph, Op, Var};
pub use tensor::Tensor;
pub(crate) use tensor::gemm;
