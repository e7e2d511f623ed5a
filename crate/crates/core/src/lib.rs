//! Core library for gated multimodal SAP/EI prediction.
//!
//! Modules follow the data path: [`geometry`] turns footprints into model
//! inputs, [`datahub`] ingests and splits the dataset, [`diffcore`] provides
//! reverse-mode differentiation, [`fusionnet`] defines the model,
//! [`trainer`] fits and evaluates it, [`explain`] attributes its predictions,
//! and [`retrofit`] converts scores to costs and runs scenario sweeps.

pub mod datahub;
pub mod diffcore;
pub mod error;
pub mod explain;
pub mod fusionnet;
pub mod geometry;
pub mod retrofit;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};

/// Library version, recorded in CLI manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
