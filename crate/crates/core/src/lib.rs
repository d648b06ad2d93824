//! Construction, validation, simulation and co-kriging for joint covariance
//! matrices of multivariate spatial Gaussian processes, including
//! asymmetric cross-covariance induced by shifting the separation lag.

// Negated comparisons deliberately reject NaN; index loops mirror the maths.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod builders;
pub mod cokrige;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod joint;
pub mod kernels;
pub mod linalg;
pub mod simulate;

pub use error::{Error, Result, Violation};
pub use joint::{
    asymmetry_index, get_block, permute_ordering, CovBlockId, JointCovariance, LocationGrid,
    Ordering,
};
