//! Minimal reverse-mode automatic differentiation and the Adam optimizer.

pub mod adam;
mod graph;
mod kernels;
mod params;

pub use adam::{Adam, AdamConfig};
pub use graph::{penalty_residual, Graph, Var};
pub use params::{Gradients, ParamStore};
