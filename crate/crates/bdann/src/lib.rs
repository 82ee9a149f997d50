//! Staged transfer learning for low-data regression: deterministic source
//! pretraining, adversarial feature alignment between domains, then
//! variational fine-tuning that reports calibrated predictive uncertainty.
//!
//! The crate is organized as a set of small engines (dense networks,
//! variational layers, domain alignment, metrics) plus a pipeline module
//! that wires them into complete training strategies, a synthetic benchmark
//! with a controlled domain shift, a residual-correction workflow for
//! tabular data, and a hyperparameter search harness.

pub mod adversarial;
pub mod bayes;
pub mod data;
pub mod error;
pub mod hpo;
pub mod hybrid;
pub mod metrics;
pub mod model_io;
pub mod net;
pub mod pipeline;
pub mod rng;
pub mod synthetic;

pub use error::{Error, Result};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
