//! Bias reduction for smooth functionals of the mean and covariance of a
//! Gaussian sample, by iterated parametric bootstrap.
//!
//! The estimator `f_k(θ̂)` corrects the plug-in `f(θ̂)` with alternating
//! finite differences of `f` along bootstrap chains; see [`bias`]. The
//! [`harness`] module runs Monte Carlo experiments on top of it and
//! [`oracles`] holds closed-form references used to validate the chains.

pub mod bias;
pub mod error;
pub mod exec;
pub mod functionals;
pub mod harness;
pub mod model;
pub mod oracles;
pub mod rng;
pub mod stats;

pub use bias::{
    estimate_bk, evaluate_fk, full_estimator, homotopy_exact, homotopy_smoothed, sample_chain,
    superpose_gk, ChainKernel, ControlVariate, InnerMc, KernelKind, MCEstimate,
};
pub use error::{Error, Result};
pub use exec::Executor;
pub use functionals::{catalog, Functional, ScalarFn};
pub use model::{estimate_theta, sample_dataset, NoiseMode, Param, ParamDomain, Theta};
pub use rng::StreamKey;
