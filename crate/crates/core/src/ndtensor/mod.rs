//! Dense `f64` tensors with tape-based reverse-mode differentiation.
//!
//! Broadcasting is limited to adding a bias over the last axis; every other
//! shape mismatch is an error.

mod fastmath;
pub mod gradcheck;
mod graph;
mod tensor;

pub use graph::{Graph, RowMix, Var};
pub use tensor::Tensor;
