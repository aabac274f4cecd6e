//! Bayesian Gaussian process regression with per-dimension jumps to the
//! limiting linear model, a treed partition layer and experiment harness.

pub mod data;
pub mod dist;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod linalg;
pub mod model;
pub mod predict;
pub mod prior;
pub mod sampler;
pub mod treed;
mod serde_nalgebra;

pub use data::Observations;
pub use error::{GpError, Result};
pub use kernel::{build_cov, CorrelationState, CovMatrix};
pub use model::{GPState, HyperParams, SharedState};
pub use prior::LlmPriorParams;
