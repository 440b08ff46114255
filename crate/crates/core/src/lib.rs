//! Certified-robustness output invariance used as an inference-time privacy
//! guarantee.
//!
//! Randomized smoothing turns any base classifier into one whose label is
//! provably constant inside an L2 ball of radius `R` around the query. Seen
//! from the outside, a released label therefore cannot tell the query apart
//! from anything in that ball. This crate provides:
//!
//! - [`numerics`]: Gaussian CDF/quantile, exact binomial bounds and tests, splittable RNG streams
//! - [`nn`]: a dense two-layer ReLU classifier with masked-L1 SGD training
//! - [`smoothing`]: Monte Carlo votes, abstaining prediction, certification
//! - [`ape`]: attribute inference sets and their certified expansion
//! - [`inversion`]: a label-only boundary-repulsion model inversion attack
//! - [`harness`]: the recommendation and inversion experiment pipelines
//! - [`cli`]: the `rprivacy` command line

// NaN-rejecting `!(a < b)` checks and published coefficients are intentional.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision, clippy::needless_range_loop)]

pub mod ape;
pub mod cli;
pub mod error;
pub mod harness;
pub mod inversion;
pub mod nn;
pub mod numerics;
pub mod smoothing;

pub use error::{Error, Result};
