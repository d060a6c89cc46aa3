//! Adaptive patient-centric graph neural network for diabetes type
//! classification: graph construction, training, mini-graph inference with
//! neighbour explanations, and an HTTP service.

pub mod data;
pub mod error;
pub mod explain;
pub mod graph;
pub mod model;
pub mod numerics;
#[cfg(feature = "service")]
pub mod service;
pub mod trainer;

pub use error::{Error, Result};
