//! Deep spectral clustering with bootstrapped optimal-transport targets.

pub mod assignment;
pub mod baselines;
pub mod checkpoint;
pub mod cli;
pub mod cluster_head;
pub mod config;
pub mod data;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod network;
pub mod spectral;
pub mod trainer;
pub mod transport;

pub use error::{Error, Result};
pub use linalg::DenseMatrix;
