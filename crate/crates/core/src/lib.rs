//! Robust estimation by geometric-median aggregation.
//!
//! Split a sample into disjoint blocks, run any estimator on each block, and
//! combine the block estimates with their geometric median. The combined
//! estimator inherits the rate of the block estimator while its failure
//! probability decays exponentially in the number of blocks.
//!
//! The crate is organised as:
//!
//! - [`constants`]: the large-deviation exponent `psi`, the blow-up constants
//!   `C_alpha` and the numeric constants of the derived deviation bounds.
//! - [`median`]: point sets, the Weiszfeld/Ostresh solver, the coordinatewise
//!   and thresholded medians, and the selector baselines.
//! - [`aggregate`]: block partitioning, the confidence-boosting driver,
//!   median-of-means, the trace estimator and confidence balls.
//! - [`covariance`]: median covariance estimators and eigenprojectors.
//! - [`regress`]: Lasso and nuclear-norm least squares with their median
//!   versions, plus penalty-level calculators.
//! - [`sim`]: seeded samplers and the experiment drivers.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregate;
pub mod constants;
pub mod covariance;
pub mod error;
pub mod median;
pub mod regress;
pub mod sim;

pub use error::{Error, Result};
pub use median::{MedianOptions, MedianResult, PointSet};
