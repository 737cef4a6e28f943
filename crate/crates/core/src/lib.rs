//! NxM semi-structured sparsification of neural-network weights via ADMM.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`] and [`autodiff`]: dense fp64 tensors, a tape-based
//!   reverse-mode engine and Adam.
//! - [`nxm`]: the constraint set, its Euclidean projection, masks and the
//!   packed deployment format.
//! - [`model`]: the toy transformer and MLP, layer policy, synthetic tasks,
//!   checkpoints and dense pretraining.
//! - [`admm`]: the alternating fine-tuning loop.
//! - [`baselines`]: one-shot magnitude pruning with masked fine-tuning, and
//!   unstructured ADMM.
//! - [`analytics`] and [`experiment`]: metric logs, mask similarity,
//!   magnitude-decay reports, run configuration and sweeps.

pub mod admm;
pub mod analytics;
pub mod autodiff;
pub mod baselines;
pub mod error;
pub mod experiment;
pub mod model;
pub mod nxm;
pub mod tensor;

pub use error::{Error, NxmError, Result, TensorError};
pub use tensor::Tensor;
