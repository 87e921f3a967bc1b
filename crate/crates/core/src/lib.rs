//! Independence testing for high-dimensional data whose samples may be
//! correlated, under the matrix-variate normal model `X ~ N(mu 1', Sigma (x) Psi)`.
//!
//! * [`covmodel`]: covariance generators and the matrix-normal sampler.
//! * [`quadfunc`]: estimation of `B_n` and of `A_p` by adaptive thresholding.
//! * [`indtest`]: the max-type test that the samples are independent.
//! * [`corrtest`]: multiple testing of correlations with CLIME decorrelation.
//! * [`simharness`]: seeded, parallel Monte-Carlo experiments.

pub mod corrtest;
pub mod covmodel;
pub mod error;
pub mod indtest;
pub mod io;
pub mod normal;
pub mod quadfunc;
pub mod rng;
pub mod simharness;

pub use covmodel::{CovMatrix, CovSpec, DataMatrix};
pub use error::{Error, ErrorClass, Result};
