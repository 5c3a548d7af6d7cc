//! Dense tensors and reverse-mode differentiation.

mod dense;
mod graph;
pub mod init;

pub use dense::{Scalar, Tensor};
pub use graph::{AttentionLayout, Gradients, Graph, Var, LAYER_NORM_EPS};
