//! Minimal dense-tensor engine with tape-based reverse-mode differentiation.

mod dense;
pub mod gradcheck;
mod graph;

pub use dense::{cosine, Tensor};
pub use graph::{DropoutMode, Gradients, Graph, Var};
