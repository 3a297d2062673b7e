//! Stochastic wave equation driven by fractional-in-time, Riesz-in-space Gaussian noise.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod hilbert;
pub mod kernels;
pub mod model;
pub mod noise;
pub mod quad;
pub mod solver;
pub mod verify;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use model::{CovarianceModel, SpatialMode};
