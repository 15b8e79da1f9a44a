//! Model and prompt selection for anomaly detection using synthetic validation
//! sets built from normal samples only.

pub mod cutpaste;
pub mod diffusion;
mod error;
pub mod knn;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod sampling;
pub mod selection;
pub mod tv;

pub use error::{Error, Result};
