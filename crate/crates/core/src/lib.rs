//! Probabilistic zero-chain hard instances for non-convex stochastic
//! optimization, the oracles that expose them, baseline solvers, and an
//! audit/benchmark harness.

pub mod audit;
pub mod chain;
pub mod error;
pub mod harness;
pub mod kernels;
pub mod oracles;
pub mod protocol;
pub mod solvers;
pub mod transforms;

pub use error::{Error, Result};
