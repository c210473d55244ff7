#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Spatial interpolation on regular grids: Gaussian random field simulation,
//! ordinary kriging, and a partial-convolution U-Net trained per field with a
//! variable spatial loss.

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod covariance;
pub mod error;
pub mod grid;
pub mod harness;
pub mod io;
pub mod kriging;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod simulate;
pub mod svg;

pub use error::{Error, Result};
