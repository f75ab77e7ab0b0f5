//! Clustering from noisy observations with deconvolution kernels and
//! data-driven bandwidth selection by empirical risk comparison.

pub mod applications;
pub mod density;
pub mod erc;
pub mod error;
pub mod kernels;
pub mod minimizer;
pub mod quad;
pub mod risk;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
