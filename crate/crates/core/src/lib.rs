//! Network sparsification by stochastic binary gates.
//!
//! A network's units (or conv channels) are multiplied by Bernoulli gate
//! variables whose probabilities are parameterized through a squashing
//! function. Training minimizes the expected task loss plus an expected
//! L0 penalty; gate parameters receive unbiased gradients from antithetic
//! estimators that need only forward evaluations of the loss. After
//! training, gates with small probabilities are removed and the surviving
//! architecture is reported together with its prune rate and forward-pass
//! FLOP count.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod estimators;
pub mod gates;
pub mod metrics;
pub mod nn;
pub mod objective;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;
