//! Deterministic federated-learning simulator with Conditional Random
//! Sampling (CRS) gradient compression and a per-round LDP accountant.

pub mod cli;
pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod privacy;
pub mod rng;
pub mod sampler;

pub use config::ExperimentConfig;
pub use error::{ConfigError, DataError, EngineError, MetricsError, ModelError, PrivacyError, SamplerError, WireError};
pub use linalg::{CodecId, GradientVector, SparseUpdate};
pub use sampler::{SamplerConfig, SamplerKind};
