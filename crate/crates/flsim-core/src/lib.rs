//! Deterministic federated-learning simulator over a bandwidth-constrained
//! wireless cell, driven by a closed control loop
//! (telemetry → plan → execute → evaluate → memory).
//!
//! The numeric kernels are generic over the scalar type (see [`scalar::Scalar`]);
//! the simulation pipeline itself runs on [`Real`].

pub mod config;
pub mod control;
pub mod dataset;
pub mod error;
pub mod learning;
pub mod orchestrator;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod wireless;

/// Scalar type used by the concrete simulation pipeline.
pub type Real = f64;

/// Dataset instantiated at pipeline precision.
pub type Dataset = dataset::LabeledDataset<Real>;
/// Model parameters at pipeline precision.
pub type Params = learning::ModelParams<Real>;
/// Model update at pipeline precision.
pub type Update = learning::ModelUpdate<Real>;

pub use error::Error;

/// Client identifier within one simulated cell.
pub type ClientId = u32;
