//! Surrogate-assisted CMA-ES with generation-based evolution control.
//!
//! A Gaussian-process surrogate replaces the fitness function for whole
//! generations. The number of consecutive model-evaluated generations is
//! either fixed or adapted from the measured surrogate error (Kendall rank
//! correlation, ranking difference, or Kullback-Leibler divergence between
//! updated search distributions). A benchmark harness and a statistics
//! pipeline compare the variants.

// `!(x > 0.0)` deliberately treats NaN as invalid
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod benchmarks;
pub mod cma;
pub mod config;
pub mod control;
pub mod error;
pub mod gp;
pub mod harness;
pub mod linalg;
pub mod report;
pub mod stats;

pub use error::{Error, Result};
