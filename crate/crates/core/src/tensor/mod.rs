//! Dense `f64` tensors and a dynamic reverse-mode autodiff graph.
//!
//! A [`Graph`] is rebuilt for every forward pass. Parameter tensors are
//! borrowed into the graph as leaves, primitives append nodes, and a single
//! call to [`Graph::backward`] walks the nodes in reverse insertion order
//! (which is a valid reverse topological order) to produce [`Gradients`].

mod graph;
mod gradcheck;
mod kernels;
#[allow(clippy::module_inception)]
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use gradcheck::{finite_diff_grad, finite_diff_grad_5pt, max_relative_error};
pub use tensor::Tensor;
