//! Deterministic statistical primitives.

mod binomial;
mod normal;
mod rng;

pub use binomial::{binom_two_sided_pvalue, clopper_pearson_lower};
pub use normal::{std_normal_cdf, std_normal_inv_cdf};
pub use rng::{sample_gaussian_vector, RngStream};

pub(crate) use normal::inv_cdf;
