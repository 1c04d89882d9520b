//! Spatially varying quantile g-computation.
//!
//! Exposures are recoded to quantile levels, a regression whose intercept and
//! exposure coefficients vary over an areal adjacency graph is fit by MCMC
//! (graph-split varying-coefficient BART, or proper CAR fields for comparison),
//! and the posterior of the local mixture effect `psi(r) = sum_p beta_p(r)` is
//! summarized per region.

pub mod car;
pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod gibbs;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod par;
pub mod posterior;
pub mod quantize;
pub mod rng;
pub mod simlab;
pub mod vcbart;

pub use error::{Error, Result};
