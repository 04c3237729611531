//! A desk-scale data assimilation laboratory for studying how
//! time-correlated model errors imprint on analysis increments.
//!
//! The crate runs twin experiments on linear ring models or the Lorenz-96
//! system: a truth trajectory carries an injected systematic model-error
//! tendency, an assimilation scheme (Kalman filter or strong/weak-constraint
//! 4DVar with several model-error cycling strategies) tracks it from noisy
//! partial observations, and the diagnostics layer measures the lagged
//! covariance structure of the resulting analysis increments. For linear
//! systems an exact moment oracle provides the closed-form reference that
//! every Monte Carlo estimate is checked against.

pub mod assimilation;
pub mod covariance;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod model_error;
pub mod observing;
pub mod rng;

pub use error::{Error, Result};
