//! Advantage-aligned prioritized sampling for online soft actor-critic that
//! reuses offline data.
//!
//! The numerical core is generic over [`Scalar`]; the aliases below fix the
//! common precisions.

pub mod agent;
pub mod checkpoint;
pub mod config;
pub mod density;
pub mod envdata;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod replay;
pub mod scalar;
pub mod theory;
pub mod trainer;

#[cfg(test)]
mod testutil;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Agent32 = agent::Agent<f32>;
pub type Agent64 = agent::Agent<f64>;
pub type DenseNet32 = nn::DenseNet<f32>;
pub type DenseNet64 = nn::DenseNet<f64>;
pub type DensityEnsemble32 = density::DensityEnsemble<f32>;
pub type DensityEnsemble64 = density::DensityEnsemble<f64>;
