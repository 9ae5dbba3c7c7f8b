//! Minimal reverse-mode differentiation over `f64` tensors.

pub mod checkpoint;
pub mod gradcheck;
mod graph;
mod params;

pub use gradcheck::{grad_check, grad_check_with_params, CheckInput, GradCheckReport};
pub use graph::{Fault, Gradients, Graph, NodeId};
pub use params::{Adam, ParamGrads, ParamId, ParamStore};
