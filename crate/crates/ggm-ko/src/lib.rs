//! Edge selection for Gaussian graphical models with finite-sample
//! control of the false discovery rate.
//!
//! The estimator compares sample partial correlations against synthetic
//! "knockoff" scores drawn from the exact null law of a partial
//! correlation. Signed differences between the two are symmetric about
//! zero on null edges, so the count of strongly negative scores estimates
//! the count of false positives among the strongly positive ones; the
//! selection threshold is the smallest cutoff at which that estimate
//! stays below the target FDR. Two schemes are provided: `ko` controls a
//! modified FDR against the marginal dependence graph, `ko+` adds one to
//! the false-positive estimate and controls the usual FDR exactly.
//!
//! The crate also ships the baselines it is benchmarked against
//! (correlation and partial-correlation hard thresholding, node-wise
//! lasso neighborhood selection), synthetic band/block graph generators
//! with a Monte Carlo harness, and a compositional-data pipeline for
//! comparing estimated networks between sample groups.
//!
//! Start with [`estimator::estimate_graph`] for a single data set, or the
//! examples directory for end-to-end workflows. The `ggm-ko` binary wraps
//! the same code behind `estimate`, `simulate`, `benchmark`, and `groups`
//! subcommands.

pub mod baselines;
pub mod cli;
pub mod data;
pub mod error;
pub mod estimator;
pub mod groups;
pub mod linalg;
pub mod rng;
pub mod sim;

pub use data::DataMatrix;
pub use error::{Error, Result};
pub use estimator::{estimate_graph, Edge, Scheme, SelectionResult};
pub use rng::RngStream;
