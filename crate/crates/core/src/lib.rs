//! Neural marked temporal point processes: history encoders, mixture
//! intensity families, type-wise likelihoods and variational Granger
//! causality discovery.

pub mod cli;
pub mod config;
pub mod diff;
pub mod error;
pub mod embedding;
pub mod encoders;
pub mod events;
pub mod granger;
pub mod intensity;
pub mod model;
pub mod nn;
pub mod stats;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
