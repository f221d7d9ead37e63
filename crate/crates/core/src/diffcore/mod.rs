//! Small reverse-mode differentiation engine.
//!
//! A [`Graph`] is a static, topologically ordered list of nodes over named
//! leaf bindings. [`Graph::forward`] evaluates it, [`Evaluation::backward`]
//! returns exact gradients for every leaf declared with [`Graph::param`], and
//! [`finite_diff_check`] compares them against central differences.

mod check;
mod graph;
mod tensor;

pub use check::finite_diff_check;
pub use graph::{Bindings, Evaluation, Gradients, Graph, Mode, NodeId};
pub use tensor::Tensor;
