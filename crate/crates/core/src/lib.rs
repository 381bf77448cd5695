//! Survival regression on jackknife pseudo-observations.
//!
//! Right-censored data are turned into an `n × K` matrix of pseudo-observations
//! of the survival function at `K` time points, which is then analysed as a
//! longitudinal outcome with a complementary log-log mean model. Three
//! estimators share the same mean model:
//!
//! * [`gee::fit_gee`]: generalized estimating equations with a sandwich covariance;
//! * [`gmm::fit_gmm`]: quadratic inference functions (GMM with basis matrices);
//! * [`bayes::fit_bayes_gmm`]: posterior sampling from the GMM pseudo-likelihood.
//!
//! [`bench`] holds the Cox partial-likelihood and Bayesian piecewise-exponential
//! benchmarks, and [`sim`] the Monte Carlo harness for two-arm trials.

pub mod bayes;
pub mod bench;
pub mod design;
pub mod error;
pub mod fit;
pub mod gee;
pub mod gmm;
mod linalg;
pub mod mcmc;
pub mod pseudo;
pub mod sim;
pub mod surv;

pub use error::{Error, Result};
pub use fit::FitResult;
