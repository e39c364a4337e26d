//! Differentiable tensor engine.
//!
//! A [`Graph`] records primitive applications over dense row-major tensors,
//! evaluating each as it is appended. [`Graph::grad`] appends the adjoint
//! computation to the same graph, so gradients are ordinary tensors and can
//! be differentiated again (the gradient penalty needs exactly that).

mod backward;
pub mod gradcheck;
mod graph;
mod kernels;
mod kind;

pub use graph::{Graph, Tensor};
pub use kind::{conv_extent, numel, PrimitiveKind, Shape};
