//! Kalman-filter estimators for noisy, highly variable workload signals.

pub mod attention;
pub mod baselines;
pub mod error;
pub mod estimators;
pub mod evalkit;
pub mod filter;
pub mod numerics;
pub mod pca;
pub mod sim;
pub mod workloads;

pub use error::{Error, Result};
